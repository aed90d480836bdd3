"""Balanced elliptic random environments on the integer lattice.

An environment assigns every site x a probability vector over the moves
{+e_1, ..., +e_d, -e_1, ..., -e_d, hold}.  All environments generated here are
balanced (the +e_i and -e_i weights agree), so the walk is a quenched
martingale; drift enters only through an explicit multiplicative perturbation
of strength lambda in a unit direction ell.

Kernels are pure functions of (model, seed, site) via counter-based hashing,
so the lattice is effectively infinite and any worker can query any site.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rng
from .errors import ConfigurationError, DegenerateSiteError

KIND_HOMOGENEOUS = "homogeneous"
KIND_DIRICHLET = "iid-dirichlet-balanced"
KIND_TRAP = "iid-trap-mixture"
KIND_BLOCK = "finite-range-block"

_KINDS = (KIND_HOMOGENEOUS, KIND_DIRICHLET, KIND_TRAP, KIND_BLOCK)

SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class TransitionKernel:
    """Per-site move law: axis probabilities p_plus[i] (= p_minus[i]) and p_hold."""

    p_plus: tuple
    p_hold: float = 0.0

    def __post_init__(self):
        total = self.p_hold + 2.0 * sum(self.p_plus)
        if abs(total - 1.0) > 1e-12:
            raise ConfigurationError(f"kernel does not normalize: total={total!r}")
        if self.p_hold < -1e-15 or any(p < 0 for p in self.p_plus):
            raise ConfigurationError("kernel has negative probabilities")

    @property
    def d(self) -> int:
        return len(self.p_plus)

    def move_probs(self) -> np.ndarray:
        """Probabilities in move order [+e_1..+e_d, -e_1..-e_d, hold]."""
        p = np.asarray(self.p_plus, dtype=float)
        return np.concatenate([p, p, [self.p_hold]])


@dataclass(frozen=True)
class PerturbedKernel:
    """Unbalanced kernel produced by tilting a balanced one; probs in move order."""

    probs: np.ndarray
    d: int

    def move_probs(self) -> np.ndarray:
        return self.probs


@dataclass(frozen=True)
class PerturbationParams:
    """Tilt strength lambda in (0,1) and unit direction ell."""

    lam: float
    ell: tuple

    def __post_init__(self):
        if not (0.0 <= self.lam < 1.0):
            raise ConfigurationError(f"lambda must lie in [0, 1), got {self.lam}")
        norm = float(np.linalg.norm(self.ell))
        if abs(norm - 1.0) > 1e-12:
            raise ConfigurationError(f"|ell| must be 1 within 1e-12, got {norm}")

    @property
    def d(self) -> int:
        return len(self.ell)


def perturb(kernel: TransitionKernel, params: PerturbationParams) -> PerturbedKernel:
    """Tilt each move weight by (1 + lambda ell.e); balance keeps the total at 1."""
    if params.d != kernel.d:
        raise ConfigurationError("dimension mismatch between kernel and perturbation")
    p = np.asarray(kernel.p_plus, dtype=float)
    ell = np.asarray(params.ell, dtype=float)
    plus = p * (1.0 + params.lam * ell)
    minus = p * (1.0 - params.lam * ell)
    probs = np.concatenate([plus, minus, [kernel.p_hold]])
    return PerturbedKernel(probs=probs, d=kernel.d)


def local_drift(kernel: TransitionKernel, params: PerturbationParams) -> np.ndarray:
    """One-step mean of the tilted kernel: lambda * (2 p_plus[i] ell_i)_i."""
    p = np.asarray(kernel.p_plus, dtype=float)
    ell = np.asarray(params.ell, dtype=float)
    return params.lam * 2.0 * p * ell


def epsilon_geo(kernel: TransitionKernel) -> float:
    """Geometric mean of the axis probabilities (the per-site ellipticity)."""
    p = np.asarray(kernel.p_plus, dtype=float)
    if np.any(p <= 0.0):
        raise DegenerateSiteError("kernel has a vanishing axis probability")
    return float(np.exp(np.log(p).mean()))


@dataclass(frozen=True)
class EnvironmentModel:
    """Seeded generator of an infinite balanced environment.

    Parameters
    ----------
    d : lattice dimension.
    kind : one of "homogeneous", "iid-dirichlet-balanced", "iid-trap-mixture",
        "finite-range-block".
    seed : 64-bit master seed; (model, seed, site) -> kernel is pure.
    kappa : uniform-ellipticity floor for the Dirichlet draw (and the
        background branch of the trap mixture).
    p_hold : holding probability, constant across sites (default 0).
    trap_p, trap_floor, xi0 : trap-mixture parameters; with probability trap_p
        a site is a trap with minimum axis probability trap_floor, and every
        site (trap or not) has some axis probability >= xi0.
    block : block side for the finite-range kind (kernels constant on blocks).
    p_plus : explicit axis probabilities for the homogeneous kind.

    The Dirichlet scheme sets p_plus[i] = kappa + (1 - p_hold - 2 d kappa) y_i / 2
    with y flat Dirichlet, which enforces balance, normalization and the
    ellipticity floor by construction.  No canonical law for balanced kernels
    exists; this is one convenient choice and experiments treat it as such.
    """

    d: int
    kind: str
    seed: int = 0
    kappa: float = 0.1
    p_hold: float = 0.0
    trap_p: float = 0.05
    trap_floor: float = 0.01
    xi0: float = 0.25
    block: int = 4
    p_plus: tuple | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ConfigurationError("dimension must be >= 1")
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown environment kind {self.kind!r}")
        if not (0.0 <= self.p_hold < 1.0):
            raise ConfigurationError("p_hold must lie in [0, 1)")
        active = 1.0 - self.p_hold
        if self.kind == KIND_HOMOGENEOUS:
            p = self.p_plus
            if p is None:
                p = tuple([active / (2 * self.d)] * self.d)
                object.__setattr__(self, "p_plus", p)
            if len(p) != self.d:
                raise ConfigurationError("p_plus length must equal d")
            if abs(2 * sum(p) + self.p_hold - 1.0) > 1e-12:
                raise ConfigurationError("homogeneous kernel does not normalize")
            if min(p) <= 0:
                raise ConfigurationError("homogeneous kernel must be elliptic")
        elif self.kind in (KIND_DIRICHLET, KIND_BLOCK):
            if not (0.0 < self.kappa <= active / (2 * self.d)):
                raise ConfigurationError(
                    f"kappa must lie in (0, {active / (2 * self.d)}]; "
                    f"kappa <= 1/(2d) is the uniform-ellipticity budget"
                )
            if self.kind == KIND_BLOCK and self.block < 1:
                raise ConfigurationError("block size must be >= 1")
        elif self.kind == KIND_TRAP:
            if not (0.0 < self.trap_floor < self.kappa):
                raise ConfigurationError("need 0 < trap_floor < kappa")
            if not (0.0 <= self.trap_p <= 1.0):
                raise ConfigurationError("trap probability must lie in [0, 1]")
            trap_big = active / 2.0 - (self.d - 1) * self.trap_floor
            if trap_big < self.xi0:
                raise ConfigurationError(
                    "trap sites cannot honor the max-probability guarantee: "
                    f"(1-p_hold)/2 - (d-1) trap_floor = {trap_big} < xi0 = {self.xi0}"
                )
            spread = active / 2.0 - self.xi0 - (self.d - 1) * self.kappa
            if spread < 0:
                raise ConfigurationError(
                    "background sites cannot fit xi0 plus the kappa floor: "
                    f"need xi0 + (d-1) kappa <= (1-p_hold)/2, slack {spread}"
                )

    # ------------------------------------------------------------------
    # vectorized kernel generation
    # ------------------------------------------------------------------

    def site_stream_keys(self, sites: np.ndarray, bases: np.ndarray | None = None) -> np.ndarray:
        """Per-site hash keys; `bases` optionally carries a per-row master key
        (used by annealed ensembles where each walker owns its own environment).

        Coordinates enter through a linear fold with odd 64-bit constants
        followed by one splitmix round; the per-draw mix inside `uniforms`
        supplies the second round.
        """
        sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
        cells = np.floor_divide(sites, self.block) if self.kind == KIND_BLOCK else sites
        if bases is None:
            base = np.uint64(rng.stream_key(self.seed, rng.TAG_ENV))
        else:
            base = bases.astype(np.uint64, copy=False)
        per_axis = cells.astype(np.uint64)
        acc = per_axis[:, 0] * rng.AXIS_CONSTANTS[0]
        for i in range(1, self.d):
            acc = acc + per_axis[:, i] * rng.AXIS_CONSTANTS[i]
        return rng.mix64(base ^ acc)

    def p_plus_from_keys(self, keys: np.ndarray) -> np.ndarray:
        """Axis probabilities from per-site stream keys, shape (n, d)."""
        n = keys.shape[0]
        active = 1.0 - self.p_hold
        if self.kind == KIND_HOMOGENEOUS:
            return np.tile(np.asarray(self.p_plus, dtype=float), (n, 1))
        if self.kind in (KIND_DIRICHLET, KIND_BLOCK):
            return self._dirichlet_from_keys(keys, self.kappa, active)
        # trap mixture
        u_trap = rng.uniforms(keys, 0)
        u_axis = rng.uniforms(keys, 1)
        axis = np.minimum((u_axis * self.d).astype(np.int64), self.d - 1)
        y = self._flat_dirichlet(keys, counter0=2)
        spread = active / 2.0 - self.xi0 - (self.d - 1) * self.kappa
        background = self.kappa + y * spread
        rows = np.arange(n)
        background[rows, axis] = self.xi0 + y[rows, axis] * spread
        trap = np.full((n, self.d), self.trap_floor, dtype=float)
        trap[rows, axis] = active / 2.0 - (self.d - 1) * self.trap_floor
        is_trap = (u_trap < self.trap_p)[:, None]
        return np.where(is_trap, trap, background)

    def p_plus_at(self, sites: np.ndarray) -> np.ndarray:
        """Axis probabilities at an (n, d) array of sites, shape (n, d)."""
        sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
        if sites.shape[1] != self.d:
            raise ConfigurationError("site array has wrong dimension")
        return self.p_plus_from_keys(self.site_stream_keys(sites))

    def _flat_dirichlet(self, keys: np.ndarray, counter0: int) -> np.ndarray:
        """Flat Dirichlet over d coordinates; for d = 2 the pair (u, 1-u) with
        u uniform has exactly that law, otherwise normalized exponentials."""
        if self.d == 2:
            u = rng.uniforms(keys, counter0)
            return np.stack([u, 1.0 - u], axis=1)
        e = np.empty((keys.shape[0], self.d), dtype=float)
        for i in range(self.d):
            u = rng.uniforms(keys, counter0 + i)
            e[:, i] = -np.log1p(-u)
        total = e.sum(axis=1)
        total[total == 0.0] = 1.0
        return e / total[:, None]

    def _dirichlet_from_keys(self, keys, kappa, active) -> np.ndarray:
        y = self._flat_dirichlet(keys, counter0=0)
        return kappa + (active - 2 * self.d * kappa) * y / 2.0

    # ------------------------------------------------------------------
    # scalar interface
    # ------------------------------------------------------------------

    def kernel_at(self, site: Sequence[int]) -> TransitionKernel:
        p = self.p_plus_at(np.asarray(site, dtype=np.int64)[None, :])[0]
        return TransitionKernel(p_plus=tuple(float(v) for v in p), p_hold=self.p_hold)

    def min_axis_prob(self, sites: np.ndarray) -> np.ndarray:
        return self.p_plus_at(sites).min(axis=1)

    def with_seed(self, seed: int) -> "EnvironmentModel":
        return dataclasses.replace(self, seed=seed)

    def descriptor(self) -> dict:
        out = dataclasses.asdict(self)
        if out["p_plus"] is not None:
            out["p_plus"] = list(out["p_plus"])
        return out

    @staticmethod
    def from_descriptor(desc: dict) -> "EnvironmentModel":
        desc = dict(desc)
        if desc.get("p_plus") is not None:
            desc["p_plus"] = tuple(desc["p_plus"])
        return EnvironmentModel(**desc)

    # convenience constructors ------------------------------------------------

    @staticmethod
    def srw(d: int) -> "EnvironmentModel":
        return EnvironmentModel(d=d, kind=KIND_HOMOGENEOUS)

    @staticmethod
    def dirichlet(d: int, kappa: float, seed: int, p_hold: float = 0.0) -> "EnvironmentModel":
        return EnvironmentModel(d=d, kind=KIND_DIRICHLET, kappa=kappa, seed=seed, p_hold=p_hold)

    @staticmethod
    def trap_mixture(d: int, trap_p: float, trap_floor: float, xi0: float,
                     kappa: float, seed: int) -> "EnvironmentModel":
        return EnvironmentModel(d=d, kind=KIND_TRAP, trap_p=trap_p,
                                trap_floor=trap_floor, xi0=xi0, kappa=kappa, seed=seed)


def sample_site(model: EnvironmentModel, site: Sequence[int]) -> TransitionKernel:
    """Kernel at a single site; deterministic in (model, seed, site)."""
    return model.kernel_at(site)


class TorusEnvironment:
    """Dense kernels on the cube [-N, N]^d, extended periodically.

    Also accepts an explicit axis-probability array of arbitrary shape, which
    is how small hand-built fixtures (e.g. a two-site one-dimensional lazy
    chain) enter the stationary-density solver.
    """

    def __init__(self, p_plus: np.ndarray, p_hold, shape: tuple,
                 origin: tuple | None = None, provenance: dict | None = None):
        self.shape = tuple(int(s) for s in shape)
        self.d = len(self.shape)
        self.p_plus = np.asarray(p_plus, dtype=float).reshape(self.shape + (self.d,))
        hold = np.asarray(p_hold, dtype=float)
        if hold.ndim == 0:
            hold = np.full(self.shape, float(hold))
        self.p_hold = hold.reshape(self.shape)
        self.origin = tuple(origin) if origin is not None else tuple(0 for _ in self.shape)
        self.provenance = provenance or {}
        total = self.p_hold + 2.0 * self.p_plus.sum(axis=-1)
        if np.max(np.abs(total - 1.0)) > 1e-12:
            raise ConfigurationError("torus kernels do not normalize")

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.shape))

    def wrap_index(self, site: Sequence[int]) -> tuple:
        return tuple((int(c) - o) % s for c, o, s in zip(site, self.origin, self.shape))

    def kernel_at(self, site: Sequence[int]) -> TransitionKernel:
        idx = self.wrap_index(site)
        return TransitionKernel(p_plus=tuple(float(v) for v in self.p_plus[idx]),
                                p_hold=float(self.p_hold[idx]))

    def p_plus_at(self, sites: np.ndarray) -> np.ndarray:
        sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
        idx = tuple(
            (sites[:, i] - self.origin[i]) % self.shape[i] for i in range(self.d)
        )
        return self.p_plus[idx]

    def sites(self) -> np.ndarray:
        """All torus sites in lexicographic order, shape (n_sites, d)."""
        axes = [np.arange(o, o + s) for o, s in zip(self.origin, self.shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def save(self, path) -> None:
        np.savez(path, version=SNAPSHOT_VERSION,
                 descriptor=json.dumps(self.provenance, sort_keys=True),
                 shape=np.asarray(self.shape), origin=np.asarray(self.origin),
                 p_plus=self.p_plus, p_hold=self.p_hold)

    @staticmethod
    def load(path) -> "TorusEnvironment":
        with np.load(path, allow_pickle=False) as data:
            if int(data["version"]) != SNAPSHOT_VERSION:
                raise ConfigurationError("unsupported snapshot version")
            return TorusEnvironment(
                p_plus=data["p_plus"], p_hold=data["p_hold"],
                shape=tuple(data["shape"]), origin=tuple(data["origin"]),
                provenance=json.loads(str(data["descriptor"])))


def periodize(model: EnvironmentModel, N: int) -> TorusEnvironment:
    """Freeze the kernels on [-N, N]^d and extend them periodically."""
    if N < 1:
        raise ConfigurationError("N must be >= 1")
    side = 2 * N + 1
    shape = (side,) * model.d
    origin = (-N,) * model.d
    axes = [np.arange(-N, N + 1)] * model.d
    mesh = np.meshgrid(*axes, indexing="ij")
    sites = np.stack([m.ravel() for m in mesh], axis=1)
    p_plus = model.p_plus_at(sites).reshape(shape + (model.d,))
    return TorusEnvironment(p_plus=p_plus, p_hold=model.p_hold, shape=shape,
                            origin=origin,
                            provenance={"model": model.descriptor(), "N": N})


class PerturbedEnvironment:
    """View of a balanced environment tilted by (1 + lambda ell.e).

    Provides the (n, 2d+1) move-probability array the walk drivers consume,
    in move order [+e_1..+e_d, -e_1..-e_d, hold].
    """

    def __init__(self, base, params: PerturbationParams | None = None):
        self.base = base
        self.params = params
        self.d = base.d
        if params is not None and params.d != base.d:
            raise ConfigurationError("perturbation dimension mismatch")

    @property
    def lam(self) -> float:
        return 0.0 if self.params is None else self.params.lam

    def move_probs_at(self, sites: np.ndarray) -> np.ndarray:
        sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
        p = self.base.p_plus_at(sites)
        if hasattr(self.base, "p_hold") and np.ndim(self.base.p_hold) == 0:
            hold = np.full(sites.shape[0], float(self.base.p_hold))
        elif isinstance(self.base, TorusEnvironment):
            idx = tuple((sites[:, i] - self.base.origin[i]) % self.base.shape[i]
                        for i in range(self.d))
            hold = self.base.p_hold[idx]
        else:
            hold = np.full(sites.shape[0], 0.0)
        if self.params is None:
            plus = p
            minus = p
        else:
            ell = np.asarray(self.params.ell, dtype=float)
            tilt = self.params.lam * ell
            plus = p * (1.0 + tilt)
            minus = p * (1.0 - tilt)
        return np.concatenate([plus, minus, hold[:, None]], axis=1)
