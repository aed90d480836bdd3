"""Discrete elliptic difference operators and their a-priori inequalities.

An operator is a row-stochastic weight function a(x, .) with finite support;
L u(x) = sum_y a(x,y) (u(y) - u(x)).  Balanced nearest-neighbor operators come
straight from environment kernels; big-jump balanced operators come from exit
kernels of percolation clusters.

The module provides exact Dirichlet solves, the upper contact set (the
discrete Alexandrov device: gradients s for which x maximizes u(z) - s.z),
and numerical verification of the maximum principle, the mean-value
inequality and the Harnack inequality on ensembles of random instances.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import ConvexHull
from scipy.spatial import QhullError

from . import rng
from .environment import (EnvironmentModel, PerturbationParams,
                          PerturbedEnvironment)
from .errors import ConfigurationError, SolverError
from .walk import move_vectors

_DATA = Path(__file__).parent / "data" / "calibrated_constants.json"


class KernelOperator:
    """Nearest-neighbor operator with weights from environment kernels.

    Balanced environments give b(x) = sum_y a(x,y)(y - x) = 0 and jump radius
    1; an optional tilt (lam, ell) produces the drifted operator.
    """

    def __init__(self, env, params: PerturbationParams | None = None):
        self.env = env if isinstance(env, PerturbedEnvironment) \
            else PerturbedEnvironment(env, params)
        self.d = self.env.d
        self._moves = move_vectors(self.d)
        self._cache = {}

    def row(self, x: tuple):
        """(targets, weights) with positive-weight moves only."""
        got = self._cache.get(x)
        if got is None:
            probs = self.env.move_probs_at(np.asarray(x, dtype=np.int64)[None, :])[0]
            targets = [tuple(np.asarray(x) + v) for v in self._moves[:-1]]
            if probs[-1] > 0:
                targets.append(tuple(x))
                got = (targets, probs)
            else:
                got = (targets, probs[:-1])
            self._cache[x] = got
        return got

    def balance(self, x: tuple) -> np.ndarray:
        targets, w = self.row(x)
        delta = np.asarray(targets, dtype=float) - np.asarray(x, dtype=float)
        return w @ delta

    def jump_radius(self, x: tuple) -> float:
        return 1.0

    def epsilon(self, x: tuple) -> float:
        """Geometric-mean axis weight at x (ellipticity of the balanced part)."""
        probs = self.env.move_probs_at(np.asarray(x, dtype=np.int64)[None, :])[0]
        p = np.sqrt(probs[: self.d] * probs[self.d:2 * self.d])
        if np.any(p <= 0):
            raise ConfigurationError(f"degenerate kernel at {x}")
        return float(np.exp(np.log(p).mean()))


class TableOperator:
    """Operator given by an explicit table {x: (targets, weights)}."""

    def __init__(self, table: dict, d: int):
        self.table = {tuple(k): (list(map(tuple, t)), np.asarray(w, dtype=float))
                      for k, (t, w) in table.items()}
        self.d = d
        for x, (t, w) in self.table.items():
            if abs(w.sum() - 1.0) > 1e-10:
                raise ConfigurationError(f"row at {x} does not normalize")

    def row(self, x: tuple):
        try:
            return self.table[tuple(x)]
        except KeyError:
            raise ConfigurationError(f"operator has no row at {x}") from None

    def balance(self, x: tuple) -> np.ndarray:
        targets, w = self.row(x)
        delta = np.asarray(targets, dtype=float) - np.asarray(x, dtype=float)
        return w @ delta

    def jump_radius(self, x: tuple) -> float:
        targets, _ = self.row(x)
        delta = np.abs(np.asarray(targets) - np.asarray(x))
        return float(delta.max()) if len(targets) else 0.0


def apply(op, u, x: tuple) -> float:
    """L u(x) = sum_y a(x,y) (u(y) - u(x))."""
    ux = _value(u, x)
    targets, w = op.row(tuple(x))
    total = 0.0
    for weight, y in zip(w, targets):
        total += weight * (_value(u, y) - ux)
    return float(total)


def _value(u, x):
    if callable(u):
        return float(u(tuple(x)))
    if np.isscalar(u):
        return float(u)
    try:
        return float(u[tuple(x)])
    except KeyError:
        raise ConfigurationError(f"function not defined at {x}") from None


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------


def box_sites(radius: int, d: int, center=None) -> list:
    center = (0,) * d if center is None else tuple(center)
    rng_ = range(-radius, radius + 1)
    return [tuple(c + o for c, o in zip(center, pt))
            for pt in itertools.product(rng_, repeat=d)]


def ball_sites(radius: float, d: int, center=None) -> list:
    """Euclidean ball {|x - center| < radius}."""
    center = (0,) * d if center is None else tuple(center)
    r = int(np.ceil(radius))
    out = []
    for pt in itertools.product(range(-r, r + 1), repeat=d):
        if sum(c * c for c in pt) < radius ** 2:
            out.append(tuple(c + o for c, o in zip(center, pt)))
    return out


def operator_boundary(op, interior: list) -> list:
    """Sites outside `interior` reachable in one jump from it."""
    inside = set(interior)
    seen = []
    seen_set = set()
    for x in interior:
        targets, w = op.row(x)
        for weight, y in zip(w, targets):
            if weight > 0 and y not in inside and y not in seen_set:
                seen_set.add(y)
                seen.append(y)
    return seen


@dataclass
class DirichletProblem:
    operator: object
    interior: list
    boundary_values: object      # callable or dict on the boundary
    rhs: object                  # callable, dict or scalar on the interior

    def boundary_sites(self) -> list:
        return operator_boundary(self.operator, self.interior)


def solve_dirichlet(problem: DirichletProblem, tol: float = 1e-9) -> dict:
    """Solve L u = g on the interior with the given boundary data.

    Returns u on interior plus boundary; raises when the residual exceeds tol.
    """
    interior = [tuple(x) for x in problem.interior]
    index = {x: i for i, x in enumerate(interior)}
    boundary = problem.boundary_sites()
    bvals = {tuple(x): _value(problem.boundary_values, x) for x in boundary}
    n = len(interior)
    rows, cols, vals = [], [], []
    rhs = np.empty(n)
    for i, x in enumerate(interior):
        targets, w = problem.operator.row(x)
        diag = -1.0
        b = _rhs_value(problem.rhs, x)
        for weight, y in zip(w, targets):
            if weight == 0.0:
                continue
            if y == x:
                diag += weight
            elif y in index:
                rows.append(i)
                cols.append(index[y])
                vals.append(weight)
            else:
                b -= weight * bvals[y]
        rows.append(i)
        cols.append(i)
        vals.append(diag)
        rhs[i] = b
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    try:
        sol = spla.spsolve(A, rhs)
    except Exception as exc:
        raise SolverError(f"Dirichlet solve failed: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise SolverError("Dirichlet solve returned non-finite values")
    u = {x: float(v) for x, v in zip(interior, sol)}
    u.update(bvals)
    resid = max(abs(apply(problem.operator, u, x) - _rhs_value(problem.rhs, x))
                for x in interior)
    if resid > tol:
        raise SolverError(f"Dirichlet residual {resid:.3e} above tolerance {tol}")
    return u


def _rhs_value(g, x) -> float:
    if g is None:
        return 0.0
    if np.isscalar(g):
        return float(g)
    return _value(g, x)


# ---------------------------------------------------------------------------
# upper contact set
# ---------------------------------------------------------------------------


@dataclass
class ContactReport:
    """Per-site nonemptiness of the upper contact set, with witness gradients."""

    contact: dict                # x -> bool
    witness: dict                # x -> gradient array (only where contact)
    tol: float

    def sites(self) -> list:
        return [x for x, c in self.contact.items() if c]


def contact_set(u, E: list, Ebar: list, tol: float = 1e-9) -> ContactReport:
    """Decide, for each x in E, whether some gradient s makes x a maximizer of
    u(z) - s.z over Ebar.

    Geometrically x is in contact iff (x, u(x)) lies on the upper convex hull
    of the lifted point cloud {(z, u(z)): z in Ebar}; the hull facet through x
    supplies a witness gradient.
    """
    E = [tuple(x) for x in E]
    Ebar = [tuple(x) for x in Ebar]
    d = len(Ebar[0])
    uvals = {x: _value(u, x) for x in Ebar}
    pts = np.array([list(x) + [uvals[x]] for x in Ebar], dtype=float)
    planes = _upper_facets(pts, d)
    if planes is None:
        # u affine within tolerance: every site is in contact
        s, _ = _affine_fit(pts, d)
        return ContactReport(contact={x: True for x in E},
                             witness={x: s.copy() for x in E}, tol=tol)
    grads, offsets = planes
    contact, witness = {}, {}
    X = np.array(E, dtype=float)
    env_vals = X @ grads.T + offsets[None, :]     # plane values, (nE, nF)
    best = env_vals.argmin(axis=1)
    envelope = env_vals[np.arange(len(E)), best]
    for i, x in enumerate(E):
        is_contact = uvals[x] >= envelope[i] - tol
        contact[x] = bool(is_contact)
        if is_contact:
            witness[x] = grads[best[i]].copy()
    return ContactReport(contact=contact, witness=witness, tol=tol)


def _upper_facets(pts: np.ndarray, d: int):
    """Plane functions u = s.x + c of the upper hull facets; None if the cloud
    is affinely flat (every point on one plane)."""
    s, resid = _affine_fit(pts, d)
    if resid < 1e-12:
        return None
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return None
    eqs = hull.equations            # a.p + b <= 0 inside
    upper = eqs[:, d] > 1e-12
    if not np.any(upper):
        return None
    a = eqs[upper]
    grads = -a[:, :d] / a[:, d][:, None]
    offsets = -a[:, d + 1] / a[:, d]
    return grads, offsets


def _affine_fit(pts: np.ndarray, d: int):
    A = np.column_stack([pts[:, :d], np.ones(len(pts))])
    coef, *_ = np.linalg.lstsq(A, pts[:, d], rcond=None)
    resid = np.max(np.abs(A @ coef - pts[:, d]))
    return coef[:d], resid


def contact_set_bruteforce(u, E, Ebar, s_grid: np.ndarray, tol: float = 1e-9):
    """Grid-search oracle: x is flagged when some gradient in s_grid touches."""
    E = [tuple(x) for x in E]
    Ebar = [tuple(x) for x in Ebar]
    uv = np.array([_value(u, z) for z in Ebar])
    Z = np.array(Ebar, dtype=float)
    out = {}
    for x in E:
        ux = _value(u, x)
        xv = np.asarray(x, dtype=float)
        lhs = ux - s_grid @ xv                       # (nS,)
        rhs = (uv[None, :] - s_grid @ Z.T)           # (nS, nZ)
        out[x] = bool(np.any(np.all(lhs[:, None] >= rhs - tol, axis=1)))
    return out


# ---------------------------------------------------------------------------
# maximum principle / mean value / Harnack
# ---------------------------------------------------------------------------


def check_maximum_principle(op, u, g, E: list, boundary: list | None = None,
                            site_weight=None, constant: float | None = None,
                            tol: float = 1e-9) -> dict:
    """Verify the Alexandrov-type bound
        max_E u <= C diam(Ebar) (sum_{contact} |g(x) w(x)|^d)^{1/d} + max_bdry u
    with w = 1/epsilon by default, plus the pure (g = 0) maximum principle.

    The operator hypothesis L u >= -g is checked pointwise on the contact set;
    failures are reported, not asserted.
    """
    E = [tuple(x) for x in E]
    boundary = boundary if boundary is not None else operator_boundary(op, E)
    Ebar = E + [tuple(x) for x in boundary]
    d = op.d
    if site_weight is None:
        site_weight = lambda x: 1.0 / op.epsilon(x)
    if constant is None:
        constant = load_calibrated().get("max_principle_C", 1.0)
    report = contact_set(u, E, Ebar, tol=tol)
    hypothesis_ok = True
    total = 0.0
    for x in report.sites():
        gx = _rhs_value(g, x)
        if apply(op, u, x) < -gx - tol:
            hypothesis_ok = False
        total += abs(gx * site_weight(x)) ** d
    diam = _diameter(Ebar)
    max_int = max(_value(u, x) for x in E)
    max_bdry = max(_value(u, x) for x in boundary)
    rhs = constant * diam * total ** (1.0 / d) + max_bdry
    return {
        "max_interior": max_int,
        "max_boundary": max_bdry,
        "rhs_bound": rhs,
        "constant": constant,
        "diameter": diam,
        "contact_sum": total,
        "n_contact": len(report.sites()),
        "hypothesis_ok": hypothesis_ok,
        "bound_holds": max_int <= rhs + tol,
        "pure_principle_holds": max_int <= max_bdry + tol,
    }


def _diameter(sites: list) -> float:
    arr = np.asarray(sites)
    return float(max(arr[:, i].max() - arr[:, i].min() for i in range(arr.shape[1])))


def random_boundary(boundary: list, seed: int, spike: int | None = None) -> dict:
    """iid uniform(0,1) boundary data, or a single unit spike when requested."""
    key = rng.stream_key(seed, rng.TAG_BOUNDARY)
    if spike is not None:
        return {tuple(x): (1.0 if i == spike % len(boundary) else 0.0)
                for i, x in enumerate(sorted(boundary))}
    return {tuple(x): rng.uniform_scalar(key, i)
            for i, x in enumerate(sorted(boundary))}


def harmonic_instance(env_like, R: float, seed: int, d: int,
                      spike: int | None = None,
                      params: PerturbationParams | None = None):
    """A nonnegative harmonic function on the ball B_R from random boundary data."""
    op = KernelOperator(env_like, params)
    interior = ball_sites(R, d)
    boundary = operator_boundary(op, interior)
    data = random_boundary(boundary, seed, spike=spike)
    problem = DirichletProblem(operator=op, interior=interior,
                               boundary_values=data, rhs=0.0)
    u = solve_dirichlet(problem)
    return op, interior, boundary, u


def harnack_experiment(model: EnvironmentModel, R_list, sigma: float,
                       n_instances: int, seed: int,
                       include_spikes: bool = True) -> dict:
    """max/min ratios of nonnegative harmonic functions over the inner ball
    B_{sigma R}, across random boundary data and fresh environments.

    The Harnack inequality says the ratio admits a bound independent of R;
    the experiment reports the per-R maxima so stability can be judged.
    """
    results = {}
    for R in R_list:
        ratios = []
        seeds = []
        for inst in range(n_instances):
            env_seed = rng.spawn_seed(seed, 0x4A, int(R), inst)
            m = model.with_seed(env_seed)
            spike = inst if include_spikes and inst % 4 == 0 else None
            _, interior, _, u = harmonic_instance(m, R, env_seed, model.d,
                                                  spike=spike)
            inner = [x for x in ball_sites(sigma * R, model.d)]
            vals = np.array([u[x] for x in inner])
            seeds.append(env_seed)
            if vals.min() <= 0:
                if vals.max() <= 0:
                    ratios.append(1.0)
                    continue
                raise SolverError(
                    "harmonic function vanished inside the ball; elliptic "
                    "operators with nonnegative boundary data forbid this")
            ratios.append(float(vals.max() / vals.min()))
        arr = np.asarray(ratios)
        results[R] = {"max_ratio": float(arr.max()),
                      "mean_ratio": float(arr.mean()),
                      "n": len(arr), "ratios": ratios, "seeds": seeds}
    return results


def mean_value_check(op, u, R: float, sigma: float, p: float,
                     center=None) -> dict:
    """Ratio of max_{B_sigma R} u to the weighted norm ||u^+ / eps^{d/p}||_{B_R, p}."""
    d = op.d
    inner = ball_sites(sigma * R, d, center=center)
    outer = ball_sites(R, d, center=center)
    lhs = max(_value(u, x) for x in inner)
    vals = np.array([max(_value(u, x), 0.0) / op.epsilon(x) ** (d / p)
                     for x in outer])
    rhs = float((np.mean(vals ** p)) ** (1.0 / p))
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs <= 0 else float("inf"))
    return {"lhs": lhs, "rhs_norm": rhs, "ratio": ratio, "p": p, "sigma": sigma,
            "R": R, "trivial_pass": lhs <= 0}


# ---------------------------------------------------------------------------
# calibrated constants
# ---------------------------------------------------------------------------


def load_calibrated() -> dict:
    if _DATA.exists():
        return json.loads(_DATA.read_text())
    return {}


def calibrate_max_principle(seed: int = 20120901, R: int = 8, n: int = 50,
                            margin: float = 1.25) -> float:
    """Largest LHS/(diam * sum^{1/d}) ratio over simple-random-walk instances
    with random nonnegative right-hand sides, inflated by a safety margin.
    The result is frozen once and reused by every later bound check."""
    model = EnvironmentModel.srw(2)
    op = KernelOperator(model)
    interior = box_sites(R, 2)
    boundary = operator_boundary(op, interior)
    worst = 0.0
    key = rng.stream_key(seed, 0xCA11)
    for inst in range(n):
        g = {x: rng.uniform_scalar(key, inst * 100003 + i)
             for i, x in enumerate(interior)}
        problem = DirichletProblem(op, interior, boundary_values=0.0,
                                   rhs={x: -g[x] for x in interior})
        u = solve_dirichlet(problem)
        rep = check_maximum_principle(op, u, g, interior, boundary, constant=1.0)
        denom = rep["diameter"] * rep["contact_sum"] ** (1.0 / 2)
        if denom > 0:
            worst = max(worst, rep["max_interior"] / denom)
    return worst * margin
