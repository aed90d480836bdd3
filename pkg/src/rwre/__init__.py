"""Simulation and verification laboratory for random walks in balanced
random environments on the integer lattice.

Modules by role: `environment` (kernel generation, tilts, periodization),
`walk` (scalar and ensemble drivers, path functionals), `regeneration` (both
regeneration constructions and slab hitting laws), `stationary` (invariant
densities and diffusivity), `elliptic` (difference operators and a-priori
inequalities), `percolation` (low-ellipticity clusters and exit kernels),
`einstein` (linear-response experiments), `cli`/`experiments`/`reporting`
(orchestration and persistence).
"""

__version__ = "0.1.0"
