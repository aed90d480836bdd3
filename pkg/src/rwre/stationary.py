"""Stationary density of the periodized walk and derived equilibrium quantities.

The walk on the torus obtained by folding [-N, N]^d is an irreducible finite
Markov chain; its unique invariant measure is written as a density against the
uniform measure (mean 1 over the torus).  The density feeds weighted norms,
kernel observables and the diffusivity matrix of the equilibrium walk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import rng
from .environment import EnvironmentModel, TorusEnvironment, periodize
from .errors import ConfigurationError, SolverError
from .walk import batch_mean_ci


def transition_matrix(env: TorusEnvironment) -> sp.csr_matrix:
    """Row-stochastic one-step matrix of the folded walk (sites flattened in C
    order of the torus shape)."""
    shape = env.shape
    d = env.d
    n = env.n_sites
    flat_plus = env.p_plus.reshape(n, d)
    flat_hold = env.p_hold.reshape(n)
    idx = np.arange(n)
    coords = np.stack(np.unravel_index(idx, shape), axis=1)
    rows, cols, vals = [], [], []
    for i in range(d):
        for sign in (1, -1):
            nb = coords.copy()
            nb[:, i] = (nb[:, i] + sign) % shape[i]
            cols_i = np.ravel_multi_index(tuple(nb.T), shape)
            rows.append(idx)
            cols.append(cols_i)
            vals.append(flat_plus[:, i])
    rows.append(idx)
    cols.append(idx)
    vals.append(flat_hold)
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n))
    return mat.tocsr()


@dataclass
class StationaryDensity:
    """Invariant density against the uniform measure on the torus."""

    values: np.ndarray          # flat, C order of env.shape, mean 1
    env: TorusEnvironment
    residual: float             # sup norm of (P^T phi - phi) / n_sites scale
    iterations: int
    method: str

    @property
    def N(self) -> int | None:
        side = self.env.shape[0]
        return (side - 1) // 2 if all(s == side for s in self.env.shape) else None

    def grid(self) -> np.ndarray:
        return self.values.reshape(self.env.shape)

    def value_at(self, site) -> float:
        idx = self.env.wrap_index(site)
        return float(self.grid()[idx])


def _residual(PT: sp.csr_matrix, phi: np.ndarray) -> float:
    return float(np.max(np.abs(PT @ phi - phi)))


def solve_phi(env: TorusEnvironment, tol: float = 1e-10,
              max_iterations: int = 200_000) -> StationaryDensity:
    """Invariant density of the folded walk, normalized to mean 1.

    Power iteration on the transposed kernel with periodic Aitken
    extrapolation; for chains up to 1e5 states a direct sparse solve of the
    stationarity system (with the normalization row appended) is the fallback.
    """
    P = transition_matrix(env)
    PT = P.T.tocsr()
    n = env.n_sites
    phi = np.ones(n)
    prev = prev2 = None
    it = 0
    for it in range(1, max_iterations + 1):
        nxt = PT @ phi
        nxt *= n / nxt.sum()
        if it % 16 == 0 and prev is not None and prev2 is not None:
            # component-wise Aitken delta-squared, guarded against blowup
            d1 = prev - prev2
            d2 = nxt - 2 * prev + prev2
            safe = np.abs(d2) > 1e-300
            acc = nxt.copy()
            acc[safe] = prev2[safe] - d1[safe] ** 2 / d2[safe]
            if np.all(acc > 0):
                acc *= n / acc.sum()
                if _residual(PT, acc) < _residual(PT, nxt):
                    nxt = acc
        prev2, prev = prev, nxt
        phi = nxt
        if it % 8 == 0 and _residual(PT, phi) < tol:
            break
    res = _residual(PT, phi)
    method = "power"
    if res >= tol:
        if n <= 100_000:
            phi = _direct_solve(PT, n)
            res = _residual(PT, phi)
            method = "direct"
        if res >= tol:
            raise SolverError(f"stationary solve stalled at residual {res:.3e}")
    if np.min(phi) < 0:
        raise SolverError("stationary density came out negative")
    phi *= n / phi.sum()
    return StationaryDensity(values=phi, env=env, residual=_residual(PT, phi),
                             iterations=it, method=method)


def _direct_solve(PT: sp.csr_matrix, n: int) -> np.ndarray:
    A = (PT - sp.identity(n, format="csr")).tolil()
    A[n - 1, :] = 1.0
    b = np.zeros(n)
    b[n - 1] = float(n)
    try:
        return spla.spsolve(A.tocsr(), b)
    except Exception as exc:  # pragma: no cover
        raise SolverError(f"direct stationary solve failed: {exc}") from exc


def weighted_norm(phi: StationaryDensity, f, j: float) -> float:
    """Normalized l^j average of phi * f over the torus:
    (|E|^{-1} sum |phi(x) f(x)|^j)^{1/j}."""
    if j < 1:
        raise ConfigurationError("norm exponent must be >= 1")
    fx = _site_values(phi.env, f)
    vals = np.abs(phi.values * fx) ** j
    return float(vals.mean() ** (1.0 / j))


def q_expectation(phi: StationaryDensity, g) -> float:
    """Density-weighted average of a kernel observable over the torus."""
    gx = _site_values(phi.env, g)
    return float((phi.values * gx).mean())


def _site_values(env: TorusEnvironment, f) -> np.ndarray:
    if callable(f):
        sites = env.sites()
        return np.asarray([f(tuple(s)) for s in sites], dtype=float)
    arr = np.asarray(f, dtype=float)
    return arr.reshape(env.n_sites)


def ellipticity_values(env: TorusEnvironment) -> np.ndarray:
    """Geometric-mean axis probability per torus site, flat C order."""
    p = env.p_plus.reshape(env.n_sites, env.d)
    return np.exp(np.log(p).mean(axis=1))


@dataclass
class DiffusivityMatrix:
    """Diagonal covariance of the rescaled equilibrium walk (lattice^2/step)."""

    diag: np.ndarray
    ci: np.ndarray              # half widths, 3 sigma over seeds
    per_seed: np.ndarray        # (n_seeds, d)

    def matrix(self) -> np.ndarray:
        return np.diag(self.diag)

    def project(self, ell) -> np.ndarray:
        return self.diag * np.asarray(ell, dtype=float)


def diffusivity(model: EnvironmentModel, N: int, n_seeds: int,
                tol: float = 1e-10) -> DiffusivityMatrix:
    """Diagonal entries 2 E_Q[axis probability], with E_Q approximated by the
    density-weighted torus average and averaged over independent seeds."""
    rows = np.empty((n_seeds, model.d))
    for k in range(n_seeds):
        m = model.with_seed(rng.spawn_seed(model.seed, 0xD1F, k))
        env = periodize(m, N)
        phi = solve_phi(env, tol=tol)
        p = env.p_plus.reshape(env.n_sites, model.d)
        rows[k] = 2.0 * (phi.values[:, None] * p).mean(axis=0)
    diag = rows.mean(axis=0)
    ci = np.array([batch_mean_ci(rows[:, i])[1] for i in range(model.d)])
    return DiffusivityMatrix(diag=diag, ci=ci, per_seed=rows)
