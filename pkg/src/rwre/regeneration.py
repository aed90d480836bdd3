"""Regeneration structures for walks drifting in the e_1 direction.

Two constructions are implemented.

* Straight-run regenerations: a time is a candidate when the walk has just
  performed L consecutive +e_1 steps under coin value 1 starting from a fresh
  running maximum; it regenerates when the level-visit stopping time after it
  never triggers (no backtrack to the start level and no level collects more
  than c5*(j+1)^2 visits).

* Level regenerations for tilted walks: levels are the lattice hyperplanes
  spaced 1/lambda1 apart along e_1.  When a segment between consecutive fresh
  levels completes, a Bernoulli coin is assigned a posteriori with probability
  beta * mu1(y) / fwd(y), where fwd is the law of the segment endpoint and mu1
  the law of the endpoint of a half-level walk conditioned to move up.  This
  reproduces the joint law of the forward construction that samples segments
  from the conditioned kernels, while the simulated path stays the plain
  tilted walk.  A coin-1 level that is never backtracked below by a full level
  is a regeneration.

Both hitting laws come from exact Green's-function solves on laterally
truncated slabs; the truncation leak is measured and must stay below a
tolerance, so every reported probability is exact up to that leak.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import rng
from .environment import (EnvironmentModel, PerturbationParams,
                          PerturbedEnvironment)
from .errors import (BetaTooLargeError, ConfigurationError, InputMismatchError,
                     SampleSizeError, SolverError, TruncationError)
from .walk import CoinStream, PathRecord, _KernelCache, _select, move_vectors

# ---------------------------------------------------------------------------
# configuration and result types
# ---------------------------------------------------------------------------


def level_spacing(lam: float, ell1: float) -> float:
    """lambda1 = 1 / (2 ceil(1/(2 lambda ell1))), so that 0.5/lambda1 is an
    integer number of lattice steps."""
    if not (0.0 < lam * ell1 < 1.0):
        raise ConfigurationError("need 0 < lambda * ell_1 < 1")
    return 0.5 / math.ceil(1.0 / (2.0 * lam * ell1))


@dataclass(frozen=True)
class LRegenConfig:
    L: int
    c5: float
    kappa: float
    horizon: int

    def __post_init__(self):
        if self.L < 1:
            raise ConfigurationError("L must be >= 1")
        if self.c5 <= 0:
            raise ConfigurationError("c5 must be positive")


@dataclass(frozen=True)
class BetaRegenConfig:
    beta: float
    lam: float
    ell: tuple
    horizon: int
    W: int = 128
    deficit_tol: float = 1e-6
    guard_levels: int = 16
    max_regens: int | None = None
    bound_W: int = 56                 # small-slab size for the coin bounds
    bound_depth: int = 36

    def __post_init__(self):
        if not (0.0 < self.beta < 1.0):
            raise ConfigurationError("beta must lie in (0, 1)")
        if self.ell[0] <= 0:
            raise ConfigurationError("levels run along e_1: need ell_1 > 0")
        object.__setattr__(self, "ell", tuple(float(v) for v in self.ell))

    @property
    def lambda1(self) -> float:
        return level_spacing(self.lam, self.ell[0])

    @property
    def spacing(self) -> int:
        return round(1.0 / self.lambda1)


@dataclass
class RegenerationRecord:
    k: int
    tau: int
    position: tuple
    tau_tilde: int | None = None
    delta: int | None = None


@dataclass
class RegenerationSequence:
    records: list
    horizon: int
    censored: bool            # True when the tail of the run may hide more
    kind: str                 # "straight-run" or "level"
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def taus(self) -> np.ndarray:
        return np.asarray([r.tau for r in self.records], dtype=np.int64)

    def positions(self) -> np.ndarray:
        return np.asarray([r.position for r in self.records], dtype=np.int64)


# ---------------------------------------------------------------------------
# straight-run (coin) regenerations
# ---------------------------------------------------------------------------


def _budget_trigger(lev: np.ndarray, c5: float) -> int | None:
    """First index at which some level j >= 0 has collected more than
    c5*(j+1)^2 visits of the displacement sequence `lev` (lev[0] = 0)."""
    nonneg = lev >= 0
    idx = np.flatnonzero(nonneg)
    if not len(idx):
        return None
    vals = lev[idx]
    order = np.argsort(vals, kind="stable")
    sorted_vals = vals[order]
    sorted_idx = idx[order]
    best = None
    top = int(sorted_vals[-1])
    bounds = np.searchsorted(sorted_vals, np.arange(top + 2))
    for j in range(top + 1):
        times = sorted_idx[bounds[j]:bounds[j + 1]]
        allowed = int(math.floor(c5 * (j + 1) ** 2))
        if len(times) > allowed:
            t = int(np.sort(times)[allowed])
            if best is None or t < best:
                best = t
    return best


def _stopping_time(lev: np.ndarray, c5: float | None) -> int | None:
    """Backtrack-or-budget stopping time on a displacement window (None when
    censored by the window end)."""
    back = np.flatnonzero(lev[1:] <= 0)
    backtrack = int(back[0]) + 1 if len(back) else None
    if c5 is None or not math.isfinite(c5):
        return backtrack
    budget = _budget_trigger(lev, c5)
    times = [t for t in (backtrack, budget) if t is not None]
    return min(times) if times else None


def detect_L_regenerations(path: PathRecord, coins: CoinStream,
                           cfg: LRegenConfig) -> RegenerationSequence:
    """Straight-run regeneration times of a coin-decomposed path.

    Every reported time tau sits at the end of an L-step coin-1 straight run
    in +e_1 launched from a fresh running maximum, and the stopping time of
    the shifted path never triggers within the horizon (so the last entries
    are certain only up to censoring, which the sequence flags).
    """
    if len(coins) != path.n_steps:
        raise InputMismatchError("coin stream does not cover the path")
    if abs(coins.kappa - cfg.kappa) > 1e-12:
        raise InputMismatchError("coin stream was generated at a different kappa")
    x1 = path.axis_displacements(0)
    n = path.n_steps
    straight = (path.moves == 0) & (coins.bits == 1)
    cand = _straight_run_candidates(x1, straight, cfg.L)
    records = []
    lo = 0
    prev_tau = 0
    pos_cache = path.positions()
    for _ in range(10 ** 9):
        nxt = cand[(cand >= lo) & (cand - cfg.L >= prev_tau)]
        if not len(nxt):
            break
        s = int(nxt[0])
        trigger = _stopping_time(x1[s:] - x1[s], cfg.c5)
        if trigger is None:
            records.append(RegenerationRecord(k=len(records) + 1, tau=s,
                                              position=tuple(pos_cache[s])))
            prev_tau = s
            lo = s
        else:
            lo = s + trigger
    return RegenerationSequence(records=records, horizon=n, censored=True,
                                kind="straight-run",
                                meta={"L": cfg.L, "c5": cfg.c5,
                                      "kappa": cfg.kappa})


def _straight_run_candidates(x1: np.ndarray, straight: np.ndarray,
                             L: int) -> np.ndarray:
    """Times n >= L whose previous L steps are all flagged and whose launch
    point n - L is a strict running maximum of the displacement."""
    n = len(straight)
    c = np.concatenate([[0], np.cumsum(straight.astype(np.int64))])
    full_run = np.zeros(n + 1, dtype=bool)
    full_run[L:] = (c[L:] - c[:-L]) == L
    prev_max = np.empty(n + 1, dtype=np.int64)
    prev_max[0] = np.iinfo(np.int64).min
    np.maximum.accumulate(x1[:-1], out=prev_max[1:])
    is_record = x1 > prev_max
    return np.flatnonzero(full_run & np.concatenate(
        [np.zeros(L, dtype=bool), is_record[:n + 1 - L]]))


def straight_run_regens_bulk(x1: np.ndarray, straight: np.ndarray, L: int,
                             max_regens: int | None = None) -> np.ndarray:
    """Regeneration times on a displacement array with the visit budget
    disabled (c5 = infinity), in which case survival of a candidate is just
    'the path never returns to its level', decidable with a suffix minimum."""
    n = len(straight)
    cand = _straight_run_candidates(x1, straight, L)
    if not len(cand):
        return np.empty(0, dtype=np.int64)
    suffix_min = np.empty(n + 1, dtype=x1.dtype)
    suffix_min[-1] = x1[-1]
    np.minimum.accumulate(x1[::-1], out=suffix_min[::-1])
    # survive: strictly above every later value (suffix min after the time)
    surv = cand[cand < n]
    surv = surv[suffix_min[surv + 1] > x1[surv]]
    out = []
    prev = 0
    for s in surv:
        if s - L >= prev:
            out.append(int(s))
            prev = s
            if max_regens is not None and len(out) >= max_regens:
                break
    return np.asarray(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# slab hitting laws
# ---------------------------------------------------------------------------


@dataclass
class SlabLaw:
    """Hitting law over the target cross-section, lateral offsets wrt base."""

    offsets: np.ndarray       # (n_top, d-1) lateral offsets
    probs: np.ndarray         # same length, summing to 1 - deficit (forward)
    deficit: float
    bottom_mass: float
    W: int

    def prob_of(self, lat_offset) -> float:
        if len(self.offsets) and self.offsets.shape[1] == 0:
            return float(self.probs[0])
        match = np.all(self.offsets == np.asarray(lat_offset), axis=1)
        hit = np.flatnonzero(match)
        return float(self.probs[hit[0]]) if len(hit) else 0.0


def _green_slab_banded(penv: PerturbedEnvironment, base_site, row_lo: int,
                       row_hi: int, W: int, start_row: int):
    """d = 2 fast path for `_green_slab`: lateral-major ordering makes the
    system banded with bandwidth = number of rows, solved by LAPACK."""
    from scipy.linalg import solve_banded

    base = np.asarray(base_site, dtype=np.int64)
    n_rows = row_hi - row_lo + 1
    n_lat = 2 * W + 1
    n = n_rows * n_lat
    lat_idx = np.repeat(np.arange(n_lat), n_rows)
    row_idx = np.tile(np.arange(n_rows), n_lat)
    sites = np.empty((n, 2), dtype=np.int64)
    sites[:, 0] = base[0] + row_lo + row_idx
    sites[:, 1] = base[1] - W + lat_idx
    probs = penv.move_probs_at(sites)
    b = n_rows
    ab = np.zeros((2 * b + 1, n))
    ab[b] = 1.0 - probs[:, 4]                     # diagonal: 1 - hold
    # A[dst, src] = -P(src -> dst); banded: ab[b + dst - src, src]
    up_ok = row_idx < n_rows - 1
    ab[b + 1, up_ok] = -probs[up_ok, 0]           # +e1: dst = src + 1
    down_ok = row_idx > 0
    ab[b - 1, down_ok] = -probs[down_ok, 2]       # -e1: dst = src - 1
    right_ok = lat_idx < n_lat - 1
    ab[2 * b, right_ok] = -probs[right_ok, 1]     # +e2: dst = src + n_rows
    left_ok = lat_idx > 0
    ab[0, left_ok] = -probs[left_ok, 3]           # -e2: dst = src - n_rows
    rhs = np.zeros(n)
    rhs[W * n_rows + (start_row - row_lo)] = 1.0
    g = solve_banded((b, b), ab, rhs)
    if not np.all(np.isfinite(g)):
        raise SolverError("banded slab solve failed")
    top_rows = row_idx == n_rows - 1
    top = g[top_rows] * probs[top_rows, 0]
    bot_rows = row_idx == 0
    bottom = float((g[bot_rows] * probs[bot_rows, 2]).sum())
    lat = np.arange(-W, W + 1)[:, None]
    total_top = float(top.sum())
    return lat, top, bottom, max(1.0 - total_top - bottom, 0.0)


def _green_slab(penv: PerturbedEnvironment, base_site, row_lo: int, row_hi: int,
                W: int, start_row: int):
    """Expected-visit vector from the start for the slab
    {row_lo <= e1-offset <= row_hi, |lateral|_inf <= W}, then the absorption
    law on the row row_hi + 1 (the target level) plus bottom/lateral leaks.

    Returns (offsets, top_probs, bottom_mass, lateral_mass).
    """
    d = penv.d
    base = np.asarray(base_site, dtype=np.int64)
    n_rows = row_hi - row_lo + 1
    lat_side = 2 * W + 1
    lat_count = lat_side ** (d - 1)
    n = n_rows * lat_count
    rows = np.repeat(np.arange(row_lo, row_hi + 1), lat_count)
    if d > 1:
        lat_axes = np.meshgrid(*([np.arange(-W, W + 1)] * (d - 1)), indexing="ij")
        lat = np.stack([a.ravel() for a in lat_axes], axis=1)
        lat_full = np.tile(lat, (n_rows, 1))
    else:
        lat = np.zeros((1, 0), dtype=np.int64)
        lat_full = np.zeros((n, 0), dtype=np.int64)
    sites = np.empty((n, d), dtype=np.int64)
    sites[:, 0] = base[0] + rows
    for j in range(1, d):
        sites[:, j] = base[j] + lat_full[:, j - 1]
    probs = penv.move_probs_at(sites)
    idx = np.arange(n)
    entries_r, entries_c, entries_v = [idx], [idx], [1.0 - probs[:, 2 * d]]
    # +e1 and -e1 shift by one full cross-section
    up_ok = rows < row_hi
    entries_r.append(idx[up_ok] + lat_count)
    entries_c.append(idx[up_ok])
    entries_v.append(-probs[up_ok, 0])
    down_ok = rows > row_lo
    entries_r.append(idx[down_ok] - lat_count)
    entries_c.append(idx[down_ok])
    entries_v.append(-probs[down_ok, d])
    # lateral axes: stride pattern of the meshgrid (C order)
    stride = lat_count
    for j in range(1, d):
        stride //= lat_side
        coord = lat_full[:, j - 1]
        ok = coord < W
        entries_r.append(idx[ok] + stride)
        entries_c.append(idx[ok])
        entries_v.append(-probs[ok, j])
        ok = coord > -W
        entries_r.append(idx[ok] - stride)
        entries_c.append(idx[ok])
        entries_v.append(-probs[ok, d + j])
    A = sp.csr_matrix(
        (np.concatenate(entries_v),
         (np.concatenate(entries_r), np.concatenate(entries_c))), shape=(n, n))
    rhs = np.zeros(n)
    start_idx = (start_row - row_lo) * lat_count + (lat_count - 1) // 2
    rhs[start_idx] = 1.0
    g = spla.spsolve(A, rhs)
    if not np.all(np.isfinite(g)):
        raise SolverError("slab Green's function solve failed")
    top = g[(row_hi - row_lo) * lat_count:] * probs[(row_hi - row_lo) * lat_count:, 0]
    bottom = float((g[:lat_count] * probs[:lat_count, d]).sum())
    total_top = float(top.sum())
    lateral = 1.0 - total_top - bottom
    return lat, top, bottom, max(lateral, 0.0)


def _green(penv, base_site, row_lo, row_hi, W, start_row):
    # the banded path wins while the band (the row count) stays moderate
    if penv.d == 2 and row_hi - row_lo + 1 <= 64:
        return _green_slab_banded(penv, base_site, row_lo, row_hi, W, start_row)
    return _green_slab(penv, base_site, row_lo, row_hi, W, start_row)


def slab_hitting_distributions(env, x, lambda1: float, W: int,
                               params: PerturbationParams | None = None,
                               deficit_tol: float = 1e-6) -> tuple:
    """Forward and conditioned hitting laws of the level 1/lambda1 above x.

    forward: law of the walk's first entry point into the target level,
    started at x (the walk may dip below its level; the slab extends downward
    far enough that the unaccounted mass stays within deficit_tol).

    conditioned: law of the first entry point for the walk started half a
    level above x, conditioned to reach the target level before the level
    of x.  Both live on the target cross-section, truncated laterally at
    |. - x|_inf <= W; a leak above deficit_tol raises TruncationError.
    """
    penv = env if isinstance(env, PerturbedEnvironment) \
        else PerturbedEnvironment(env, params)
    m = round(1.0 / lambda1)
    if abs(m - 1.0 / lambda1) > 1e-9 or m % 2:
        raise ConfigurationError("1/lambda1 must be an even integer")
    lam_ell1 = penv.params.lam * penv.params.ell[0] if penv.params else 0.0
    depth = _depth_for(lam_ell1, m, deficit_tol / 2.0)
    x = tuple(int(c) for c in x)
    lat, top, bottom, lateral = _green(penv, x, -depth, m - 1, W, 0)
    fwd_deficit = bottom + lateral
    if fwd_deficit > deficit_tol:
        raise TruncationError(
            f"forward-law leak {fwd_deficit:.3e} above {deficit_tol}: enlarge W")
    forward = SlabLaw(offsets=lat, probs=top, deficit=fwd_deficit,
                      bottom_mass=bottom, W=W)
    lat1, top1, bottom1, lateral1 = _green(penv, x, 1, m - 1, W, m // 2)
    if lateral1 > deficit_tol:
        raise TruncationError(
            f"conditioned-law leak {lateral1:.3e} above {deficit_tol}: enlarge W")
    total1 = top1.sum()
    if total1 <= 0:
        raise SolverError("conditioned law has no upward mass")
    mu1 = SlabLaw(offsets=lat1, probs=top1 / total1, deficit=lateral1,
                  bottom_mass=bottom1, W=W)
    return forward, mu1


def _depth_for(lam_ell1: float, m: int, tol: float) -> int:
    """Depth below the base level keeping the never-return mass under tol."""
    if lam_ell1 <= 0:
        raise ConfigurationError("slab depth requires a positive e_1 tilt")
    ratio = (1.0 - lam_ell1) / (1.0 + lam_ell1)
    depth = m
    while ratio ** depth * (1.0 - ratio ** m) / (1.0 - ratio ** (depth + m)) > tol:
        depth += m
    return depth


def estimate_c1(env, lambda1: float, W: int, sites,
                params: PerturbationParams | None = None,
                deficit_tol: float = 1e-6, floor: float = 1e-12) -> float:
    """Smallest forward/conditioned probability ratio over sampled sites.

    The conditioned law is dominated by c1 times the forward law; the estimate
    is the empirical min of fwd(y)/mu1(y) over targets with mu1(y) > floor.
    """
    worst = np.inf
    for site in sites:
        forward, mu1 = slab_hitting_distributions(
            env, site, lambda1, W, params=params, deficit_tol=deficit_tol)
        mask = mu1.probs > floor
        if not mask.any():
            continue
        fwd_aligned = forward.probs[_align(forward.offsets, mu1.offsets)]
        worst = min(worst, float((fwd_aligned[mask] / mu1.probs[mask]).min()))
    if not np.isfinite(worst):
        raise SolverError("no admissible targets found while estimating c1")
    return worst


def _align(offsets_a: np.ndarray, offsets_b: np.ndarray) -> np.ndarray:
    """Indices into rows of offsets_a matching rows of offsets_b (same W grid
    construction guarantees identical layouts)."""
    if offsets_a.shape == offsets_b.shape and np.array_equal(offsets_a, offsets_b):
        return np.arange(len(offsets_b))
    raise SolverError("slab cross-sections are misaligned")


# ---------------------------------------------------------------------------
# level regenerations for tilted walks
# ---------------------------------------------------------------------------


@dataclass
class _Candidate:
    S: int
    tau_tilde: int
    level_disp: int           # e1 displacement of the coin-1 level
    position: tuple


class _CoinAssigner:
    """Draws the level coin with probability beta * mu1(y) / fwd(y).

    A small truncated slab yields rigorous two-sided bounds on the ratio
    (absorbing-wall solves undercount absorption laws; adding the measured
    leak to any single target overcounts them); whenever the coin uniform
    falls outside the bound interval the decision is made cheaply, and only
    borderline draws trigger the full-width solve that meets deficit_tol.
    """

    def __init__(self, penv, cfg: BetaRegenConfig):
        self.penv = penv
        self.cfg = cfg
        self.m = cfg.spacing
        self.W_full = cfg.W
        self.n_small = 0
        self.n_full = 0
        self.max_ratio = 0.0

    def _lat_index(self, lat_off, W: int):
        d_lat = self.penv.d - 1
        if d_lat == 0:
            return 0
        if any(abs(c) > W for c in lat_off):
            return None
        idx = 0
        side = 2 * W + 1
        for c in lat_off:
            idx = idx * side + (c + W)
        return idx

    def _bounds(self, base_pos, lat_off):
        cfg = self.cfg
        depth = min(cfg.bound_depth, _depth_for(
            self.penv.params.lam * self.penv.params.ell[0], self.m, 1e-12))
        _, top, bottom, lateral = _green(
            self.penv, base_pos, -depth, self.m - 1, cfg.bound_W, 0)
        leak_f = bottom + lateral
        i = self._lat_index(lat_off, cfg.bound_W)
        fwd_lo = float(top[i]) if i is not None else 0.0
        fwd_hi = fwd_lo + leak_f
        _, top1, bottom1, lateral1 = _green(
            self.penv, base_pos, 1, self.m - 1, cfg.bound_W, self.m // 2)
        T = float(top1.sum())
        t_y = float(top1[i]) if i is not None else 0.0
        mu_lo = t_y / (T + lateral1) if T + lateral1 > 0 else 0.0
        mu_hi = (t_y + lateral1) / T if T > 0 else 1.0
        p_lo = cfg.beta * mu_lo / fwd_hi if fwd_hi > 0 else 0.0
        p_hi = cfg.beta * mu_hi / fwd_lo if fwd_lo > 0 else float("inf")
        return p_lo, p_hi

    def _exact(self, base_pos, lat_off) -> float:
        cfg = self.cfg
        while True:
            try:
                forward, mu1 = slab_hitting_distributions(
                    self.penv, base_pos, cfg.lambda1, self.W_full,
                    deficit_tol=cfg.deficit_tol)
                break
            except TruncationError:
                self.W_full = int(self.W_full * 1.5) + 1
                if self.W_full > 4096:
                    raise
        i = self._lat_index(lat_off, forward.W)
        if i is None:
            return 0.0
        fwd_p = float(forward.probs[i])
        mu_p = float(mu1.probs[i])
        if fwd_p <= 0.0:
            raise SolverError(
                f"forward law vanished at a realized endpoint near {base_pos}")
        return cfg.beta * mu_p / fwd_p

    def draw(self, base_pos, end_pos, u_coin: float) -> bool:
        lat_off = tuple(int(e - s) for e, s in zip(end_pos[1:], base_pos[1:]))
        p_lo, p_hi = self._bounds(base_pos, lat_off)
        self.n_small += 1
        if u_coin < p_lo and p_hi <= 1.25:
            self.max_ratio = max(self.max_ratio, p_lo)
            return True
        if u_coin >= p_hi:
            return False
        ratio = self._exact(base_pos, lat_off)
        self.n_full += 1
        self.max_ratio = max(self.max_ratio, ratio)
        if ratio > 1.0 + 1e-9:
            raise BetaTooLargeError(
                f"coin probability {ratio:.4f} > 1 at site {base_pos}: "
                f"beta exceeds the admissible ratio there")
        return u_coin < ratio


def detect_beta_regenerations(model: EnvironmentModel, cfg: BetaRegenConfig,
                              seed: int, walker_id: int = 0,
                              start=None) -> RegenerationSequence:
    """Run a tilted walk and detect its level regenerations.

    The walk is the plain quenched walk under the tilted kernels; coins are
    assigned a posteriori at each fresh-level completion with probability
    beta * mu1(endpoint) / forward(endpoint), evaluated through exact slab
    solves.  A coin-1 level never backtracked below by one full level spacing
    within the horizon is a regeneration; entries within `guard_levels`
    spacings of the final maximum are dropped as censored.
    """
    params = PerturbationParams(lam=cfg.lam, ell=cfg.ell)
    penv = PerturbedEnvironment(model, params)
    d = model.d
    m = cfg.spacing
    lambda1 = cfg.lambda1
    cache = _KernelCache(penv)
    from .walk import _walker_key_scalar
    wkey = _walker_key_scalar(seed, walker_id)
    bkey = rng.mix64_scalar(wkey ^ rng.TAG_BETA_COIN)
    coins = _CoinAssigner(penv, cfg)
    start = tuple(int(c) for c in (start or (0,) * d))
    pos = start
    vecs = [tuple(v) for v in move_vectors(d)]
    disp1 = 0
    max_disp = 0
    top_level = 0                  # highest level index already first-hit
    seg_start_time = 0
    seg_start_pos = start
    barrier_disp = 0               # coins matter for segments based >= this
    stack: list[_Candidate] = []
    n_coin_ones = 0
    t_final = cfg.horizon
    for t in range(cfg.horizon):
        u = rng.uniform_scalar(wkey, 2 * t)
        cum = cache.cum(pos)
        mv = _select(cum, u)
        if mv == 2 * d and cum[2 * d] - cum[2 * d - 1] <= 0.0:
            mv = 2 * d - 1
        v = vecs[mv]
        pos = tuple(p + dv for p, dv in zip(pos, v))
        if mv != 2 * d:
            disp1 += v[0]
        now = t + 1
        # candidate failures: backtracked a full level below a coin-1 level
        while stack and disp1 <= stack[-1].level_disp - m:
            stack.pop()
            barrier_disp = (max_disp // m + 1) * m
        if disp1 > max_disp:
            max_disp = disp1
            if disp1 == (top_level + 1) * m:
                # segment top_level -> top_level+1 completed at `now`
                base_disp = top_level * m
                if base_disp >= barrier_disp:
                    u_coin = rng.uniform_scalar(bkey, top_level)
                    if coins.draw(seg_start_pos, pos, u_coin):
                        n_coin_ones += 1
                        stack.append(_Candidate(S=now,
                                                tau_tilde=seg_start_time,
                                                level_disp=disp1,
                                                position=pos))
                top_level += 1
                seg_start_time = now
                seg_start_pos = pos
                if cfg.max_regens is not None:
                    confirmed = sum(
                        1 for c in stack
                        if c.level_disp <= max_disp - cfg.guard_levels * m)
                    if confirmed >= cfg.max_regens:
                        t_final = now
                        break
    guard = cfg.guard_levels * m
    records = []
    dropped = 0
    for c in stack:
        if c.level_disp <= max_disp - guard:
            records.append(RegenerationRecord(
                k=len(records) + 1, tau=c.S, position=c.position,
                tau_tilde=c.tau_tilde, delta=c.S - c.tau_tilde))
        else:
            dropped += 1
    return RegenerationSequence(
        records=records, horizon=t_final, censored=dropped > 0 or not records,
        kind="level",
        meta={"beta": cfg.beta, "lambda1": lambda1, "spacing": m,
              "lam": cfg.lam, "ell": cfg.ell,
              "n_coin_bounds": coins.n_small, "n_full_solves": coins.n_full,
              "n_coin_ones": n_coin_ones,
              "max_ratio": coins.max_ratio, "dropped_in_guard": dropped,
              "walker_id": walker_id, "seed": seed, "start": start})


# ---------------------------------------------------------------------------
# renewal diagnostics
# ---------------------------------------------------------------------------


def permutation_independence_test(x: np.ndarray, y: np.ndarray, seed: int,
                                  n_shuffles: int = 10_000) -> float:
    """p-value for dependence between paired samples via the permutation law
    of the absolute correlation (permutations from counter-based uniforms)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 10:
        raise SampleSizeError("need at least 10 pairs")
    x = x - x.mean()
    y = y - y.mean()
    denom = math.sqrt(float((x * x).sum() * (y * y).sum()))
    if denom == 0:
        return 1.0
    observed = abs(float((x * y).sum()) / denom)
    base = np.uint64(rng.stream_key(seed, 0x9E57))
    item_keys = rng.mix64(base + np.arange(len(y), dtype=np.uint64))
    n_hits = 0
    for s in range(n_shuffles):
        perm = np.argsort(rng.uniforms(item_keys, s), kind="stable")
        stat = abs(float((x * y[perm]).sum()) / denom)
        if stat >= observed - 1e-15:
            n_hits += 1
    return (n_hits + 1) / (n_shuffles + 1)


def regen_diagnostics(sequences: list, cfg: BetaRegenConfig, kappa: float,
                      c1_estimate: float, t_values=(1, 4, 9, 16),
                      seed: int = 0, min_regens: int = 500) -> dict:
    """Renewal diagnostics over a pool of level-regeneration sequences.

    (a) permutation p-value for lag-1 dependence of successive tau-tilde
        increments, (b) the exponential moment of the first regeneration's
        level progress with a 3-sigma CI, (c) the tail of the scaled first
        regeneration time against 14 exp(-kappa^2 sqrt(t)/4), and (d) a
        quantile comparison of the scaled segment durations against the
        constant-plus-exponential envelope with rate kappa^2/2.
    """
    lambda1 = cfg.lambda1
    total = sum(len(s) for s in sequences)
    if total < min_regens:
        raise SampleSizeError(f"need >= {min_regens} regenerations, have {total}")
    first_x = np.array([s.records[0].position[0] - s.meta.get("start", (0,))[0]
                        for s in sequences if len(s) >= 1], dtype=float)
    first_tau = np.array([s.records[0].tau for s in sequences if len(s) >= 1],
                         dtype=float)
    deltas = np.concatenate([[r.delta for r in s.records]
                             for s in sequences if len(s)]).astype(float)
    # lag-1 pairs of tau-tilde increments within each walk
    inc_x, inc_y = [], []
    for s in sequences:
        recs = s.records
        incs = [recs[i + 1].tau_tilde - recs[i].tau for i in range(len(recs) - 1)]
        for a, b in zip(incs[:-1], incs[1:]):
            inc_x.append(a)
            inc_y.append(b)
    out = {"n_regens": int(total), "n_walks": len(sequences),
           "beta": cfg.beta, "lambda1": lambda1}
    if len(inc_x) >= 10:
        out["independence_p_value"] = permutation_independence_test(
            np.asarray(inc_x), np.asarray(inc_y), seed=seed)
        out["n_increment_pairs"] = len(inc_x)
    # (b) exponential moment of beta*lambda1*X_tau1.e1/2
    w = np.exp(cfg.beta * lambda1 * first_x / 2.0)
    mean = float(w.mean())
    se = float(w.std(ddof=1) / math.sqrt(len(w)))
    out["exp_moment"] = {"mean": mean, "three_sigma": 3 * se,
                         "upper": mean + 3 * se, "bound": 12.0,
                         "n": len(w)}
    # (c) tail of beta*lambda1^2*tau_1
    scaled = cfg.beta * lambda1 ** 2 * first_tau
    tails = {}
    for t in t_values:
        emp = float((scaled >= t).mean())
        bound = 14.0 * math.exp(-kappa ** 2 * math.sqrt(t) / 4.0)
        tails[t] = {"empirical": emp, "bound": bound, "ok": emp <= min(bound, 1.0)}
    out["tau_tail"] = tails
    # (d) segment durations against c2 + Exp(kappa^2/2)
    c2 = 2.0 / kappa ** 2 * math.log(2.0 / c1_estimate)
    rate = kappa ** 2 / 2.0
    qs = np.linspace(0.05, 0.95, 19)
    emp_q = np.quantile(lambda1 ** 2 * deltas, qs)
    env_q = c2 + (-np.log(1 - qs)) / rate
    out["delta_qq"] = {"quantiles": qs.tolist(),
                       "empirical": emp_q.tolist(),
                       "envelope": env_q.tolist(),
                       "dominated": bool(np.all(emp_q <= env_q + 1e-12)),
                       "c2": c2}
    return out


# ---------------------------------------------------------------------------
# splitting representation
# ---------------------------------------------------------------------------


def split_representation(nu, mu, a):
    """Write a law nu with d(nu)/d(mu) >= a as the mixture
    nu = a * mu + (1 - a) * Z with Z = (nu - a mu) / (1 - a).

    Works elementwise on aligned finite distributions (sequences of weights);
    Fractions are preserved so the reconstruction is exact in rational
    arithmetic.  Returns (delta_param, mu, Z) where delta_param = 1 - a is the
    Bernoulli parameter of the switch.
    """
    nu = list(nu)
    mu = list(mu)
    if len(nu) != len(mu):
        raise ConfigurationError("distributions must share one support")
    if not (0 < a < 1):
        raise ConfigurationError("a must lie in (0, 1)")
    one = Fraction(1) if isinstance(a, Fraction) else 1.0
    z = []
    for i, (nv, mv) in enumerate(zip(nu, mu)):
        zv = (nv - a * mv) / (one - a)
        if zv < 0 and abs(zv) > 1e-15:
            raise ConfigurationError(
                f"ratio condition d(nu)/d(mu) >= a fails at atom {i}: "
                f"nu={nv}, mu={mv}")
        z.append(max(zv, zv * 0))
    return (one - a), mu, z


def split_sampler(nu, mu, a, seed: int):
    """Sampler for the splitting representation: yields indices distributed
    as nu by drawing the switch, then mu or Z."""
    delta_param, mu_law, z_law = split_representation(nu, mu, a)
    mu_cum = np.cumsum([float(v) for v in mu_law])
    z_cum = np.cumsum([float(v) for v in z_law])
    key = rng.stream_key(seed, 0x5911)

    def draw(i: int) -> int:
        u1 = rng.uniform_scalar(key, 3 * i)
        u2 = rng.uniform_scalar(key, 3 * i + 1)
        cum = z_cum if u1 < float(delta_param) else mu_cum
        return int(np.searchsorted(cum, u2 * cum[-1], side="right"))

    return draw
