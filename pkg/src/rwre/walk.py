"""Quenched walk simulation and path functionals.

Moves are encoded as small integers: code i in [0, d) is a step +e_{i+1},
code d+i is -e_{i+1}, and code 2d is a hold.  Paths store the move codes
(int8) rather than positions, with positions reconstructed on demand through
checkpointed prefix sums.

Two drivers share the same counter-based randomness so a path is a pure
function of (environment, seed, walker id):

* a scalar driver with a per-site kernel cache, for single long trajectories;
* a vectorized ensemble driver stepping many walkers at once, used by the
  Monte Carlo experiments.  Observers hook into the step loop to collect
  snapshots, first-passage times, origin visits, importance weights or full
  move records without the driver knowing about any of them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import rng
from .environment import EnvironmentModel, PerturbedEnvironment
from .errors import (BudgetError, ConfigurationError, DecompositionError)

CHECKPOINT_STRIDE = 4096


def move_vectors(d: int) -> np.ndarray:
    """The 2d+1 move vectors in code order."""
    out = np.zeros((2 * d + 1, d), dtype=np.int64)
    for i in range(d):
        out[i, i] = 1
        out[d + i, i] = -1
    return out


class PathRecord:
    """A trajectory: start point plus int8 move codes."""

    def __init__(self, start, moves: np.ndarray, d: int):
        self.start = tuple(int(c) for c in start)
        self.moves = np.asarray(moves, dtype=np.int8)
        self.d = d
        self._checkpoints = None
        self._displacements = None

    def __len__(self) -> int:
        return len(self.moves)

    @property
    def n_steps(self) -> int:
        return len(self.moves)

    def displacements(self) -> np.ndarray:
        """Positions relative to the start, shape (n_steps + 1, d)."""
        if self._displacements is None:
            steps = move_vectors(self.d)[self.moves]
            disp = np.zeros((len(self.moves) + 1, self.d), dtype=np.int64)
            np.cumsum(steps, axis=0, out=disp[1:])
            self._displacements = disp
        return self._displacements

    def positions(self) -> np.ndarray:
        return self.displacements() + np.asarray(self.start, dtype=np.int64)

    def _ensure_checkpoints(self):
        if self._checkpoints is None:
            steps = move_vectors(self.d)[self.moves]
            n_ck = len(self.moves) // CHECKPOINT_STRIDE + 1
            ck = np.zeros((n_ck, self.d), dtype=np.int64)
            for k in range(1, n_ck):
                lo, hi = (k - 1) * CHECKPOINT_STRIDE, k * CHECKPOINT_STRIDE
                ck[k] = ck[k - 1] + steps[lo:hi].sum(axis=0)
            self._checkpoints = ck

    def position_at(self, j: int) -> np.ndarray:
        """Position after j steps, via the nearest checkpoint."""
        if not (0 <= j <= len(self.moves)):
            raise IndexError(f"step index {j} out of range")
        if self._displacements is not None:
            return self._displacements[j] + np.asarray(self.start)
        self._ensure_checkpoints()
        k = j // CHECKPOINT_STRIDE
        disp = self._checkpoints[k].copy()
        lo = k * CHECKPOINT_STRIDE
        if j > lo:
            disp += move_vectors(self.d)[self.moves[lo:j]].sum(axis=0)
        return disp + np.asarray(self.start)

    def axis_displacements(self, axis: int = 0) -> np.ndarray:
        """Displacement along one axis at every time, shape (n_steps + 1,)."""
        m = self.moves
        inc = (m == axis).astype(np.int64) - (m == self.d + axis).astype(np.int64)
        out = np.zeros(len(m) + 1, dtype=np.int64)
        np.cumsum(inc, out=out[1:])
        return out

    # binary dump: two 4-bit move codes per byte, JSON header line -----------

    def dump(self, path) -> None:
        if 2 * self.d + 1 > 15:
            raise ConfigurationError("4-bit move codes require d <= 7")
        header = json.dumps({"start": list(self.start), "d": self.d,
                             "n_steps": int(self.n_steps)}, sort_keys=True)
        m = self.moves.astype(np.uint8)
        if len(m) % 2:
            m = np.concatenate([m, np.uint8([15])])
        packed = (m[0::2] << 4) | m[1::2]
        with open(path, "wb") as fh:
            fh.write(header.encode() + b"\n")
            fh.write(packed.tobytes())

    @staticmethod
    def load(path) -> "PathRecord":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode())
            packed = np.frombuffer(fh.read(), dtype=np.uint8)
        m = np.empty(2 * len(packed), dtype=np.int8)
        m[0::2] = packed >> 4
        m[1::2] = packed & 15
        return PathRecord(start=header["start"], moves=m[: header["n_steps"]],
                          d=header["d"])


class CoinStream:
    """The auxiliary Bernoulli(d*kappa) coin consumed at each step.

    Coins are generated on demand from a hash of (walker stream, step, site);
    the stream records the bits consumed along one path.
    """

    def __init__(self, bits: np.ndarray, kappa: float, path: PathRecord):
        self.bits = np.asarray(bits, dtype=np.uint8)
        self.kappa = kappa
        self.path = path

    def __len__(self) -> int:
        return len(self.bits)

    def bit(self, n: int) -> int:
        return int(self.bits[n])


def _adapt_env(env):
    # anything exposing move_probs_at works (tests use degenerate stubs)
    if hasattr(env, "move_probs_at"):
        return env
    return PerturbedEnvironment(env, None)


def _walker_key_scalar(seed: int, walker_id: int) -> int:
    return rng.mix64_scalar(rng.stream_key(seed, rng.TAG_WALK) ^ (walker_id & rng.MASK64))


# ---------------------------------------------------------------------------
# scalar driver
# ---------------------------------------------------------------------------


class _KernelCache:
    """Cumulative move probabilities per site, computed via the vector path."""

    def __init__(self, env: PerturbedEnvironment):
        self.env = env
        self.cache: dict = {}

    def cum(self, site: tuple) -> np.ndarray:
        c = self.cache.get(site)
        if c is None:
            probs = self.env.move_probs_at(np.asarray(site, dtype=np.int64)[None, :])[0]
            c = np.cumsum(probs)
            self.cache[site] = c
        return c

    def probs(self, site: tuple) -> np.ndarray:
        c = self.cum(site)
        return np.diff(np.concatenate([[0.0], c]))


def _select(cum: np.ndarray, u: float) -> int:
    k = 0
    last = len(cum) - 1
    while k < last and u >= cum[k]:
        k += 1
    return k


def simulate(env, start, n_steps: int, seed: int, walker_id: int = 0) -> PathRecord:
    """Simulate one quenched walk; each move is drawn from the site kernel."""
    penv = _adapt_env(env)
    d = penv.d
    cache = _KernelCache(penv)
    wkey = _walker_key_scalar(seed, walker_id)
    pos = tuple(int(c) for c in start)
    moves = np.empty(n_steps, dtype=np.int8)
    vecs = [tuple(v) for v in move_vectors(d)]
    for t in range(n_steps):
        u = rng.uniform_scalar(wkey, 2 * t)
        cum = cache.cum(pos)
        m = _select(cum, u)
        if m == 2 * d and cum[2 * d] - cum[2 * d - 1] <= 0.0:
            m = 2 * d - 1          # fp guard: no hold mass, stay on a move
        moves[t] = m
        if m != 2 * d:
            v = vecs[m]
            pos = tuple(p + dv for p, dv in zip(pos, v))
    return PathRecord(start=start, moves=moves, d=d)


def simulate_with_coins(env, kappa: float, start, n_steps: int, seed: int,
                        walker_id: int = 0) -> tuple:
    """Simulate a walk through the coin decomposition.

    With probability d*kappa the step is uniform over the 2d neighbors,
    otherwise it follows the residual kernel (p - kappa/2) / (1 - d kappa);
    the marginal path law equals the plain quenched law.  Requires a
    hold-free, uniformly elliptic environment with constant >= kappa.
    """
    penv = _adapt_env(env)
    d = penv.d
    if not (0.0 < kappa <= 1.0 / (2 * d)):
        raise ConfigurationError("need 0 < kappa <= 1/(2d)")
    cache = _KernelCache(penv)
    wkey = _walker_key_scalar(seed, walker_id)
    ckey = rng.mix64_scalar(wkey ^ rng.TAG_COIN)
    pos = tuple(int(c) for c in start)
    moves = np.empty(n_steps, dtype=np.int8)
    bits = np.empty(n_steps, dtype=np.uint8)
    vecs = [tuple(v) for v in move_vectors(d)]
    dk = d * kappa
    resid_cache: dict = {}
    for t in range(n_steps):
        probs = cache.probs(pos)
        if probs[2 * d] > 1e-15:
            raise DecompositionError(f"p_hold > 0 at site {pos}")
        if probs[:2 * d].min() < kappa - 1e-12:
            raise DecompositionError(
                f"ellipticity below kappa at site {pos}: "
                f"min axis prob {probs[:2 * d].min()}")
        u_coin = rng.uniform_scalar(ckey, t)
        u_move = rng.uniform_scalar(wkey, 2 * t)
        if u_coin < dk:
            bits[t] = 1
            m = min(int(u_move * 2 * d), 2 * d - 1)
        else:
            bits[t] = 0
            rc = resid_cache.get(pos)
            if rc is None:
                rc = np.cumsum((probs[:2 * d] - kappa / 2.0) / (1.0 - dk))
                resid_cache[pos] = rc
            m = _select(rc, u_move)
        moves[t] = m
        v = vecs[m]
        pos = tuple(p + dv for p, dv in zip(pos, v))
    path = PathRecord(start=start, moves=moves, d=d)
    return path, CoinStream(bits=bits, kappa=kappa, path=path)


# ---------------------------------------------------------------------------
# vectorized ensemble driver
# ---------------------------------------------------------------------------


class EnsembleEnv:
    """Move-probability source for the vector driver.

    `env_seeds` (one per walker) makes the environment annealed: every walker
    owns an independent copy drawn from the same model.
    """

    def __init__(self, base, params=None, env_seeds: np.ndarray | None = None):
        self.penv = base if isinstance(base, PerturbedEnvironment) \
            else PerturbedEnvironment(base, params)
        if params is not None and isinstance(base, PerturbedEnvironment):
            raise ConfigurationError("pass params either via base or directly")
        self.d = self.penv.d
        self.env_seeds = env_seeds
        self._bases = None
        if env_seeds is not None:
            if not isinstance(self.penv.base, EnvironmentModel):
                raise ConfigurationError("per-walker environments need a model base")
            h = rng.mix64(np.asarray(env_seeds, dtype=np.uint64))
            self._bases = rng.mix64(h ^ np.uint64(rng.TAG_ENV))

    def axis_probs(self, pos: np.ndarray):
        """(plus, minus, hold): plus/minus are (n, d); hold is a scalar or an
        (n,) array.  plus IS minus for unperturbed walks (shared, do not
        mutate)."""
        base = self.penv.base
        if isinstance(base, EnvironmentModel):
            keys = base.site_stream_keys(pos, bases=self._bases)
            p = base.p_plus_from_keys(keys)
            hold = base.p_hold
        else:
            p = base.p_plus_at(pos)
            idx = tuple((pos[:, i] - base.origin[i]) % base.shape[i]
                        for i in range(self.d))
            hold_arr = base.p_hold[idx]
            hold = float(hold_arr[0]) if np.ptp(hold_arr) == 0 else hold_arr
        params = self.penv.params
        if params is None or params.lam == 0.0:
            return p, p, hold
        ell = np.asarray(params.ell, dtype=float)
        return p * (1.0 + params.lam * ell), p * (1.0 - params.lam * ell), hold

    def move_probs(self, pos: np.ndarray) -> np.ndarray:
        plus, minus, hold = self.axis_probs(pos)
        hold_col = np.broadcast_to(np.atleast_1d(hold), (pos.shape[0],))
        return np.concatenate([plus, minus, hold_col[:, None]], axis=1)


def run_ensemble(eenv: EnsembleEnv, n_walkers: int, n_steps: int, seed: int,
                 observers=(), starts: np.ndarray | None = None,
                 walker_id0: int = 0, coin_kappa: float | None = None,
                 walker_ids: np.ndarray | None = None, t0: int = 0):
    """Step `n_walkers` walkers for `n_steps`; observers collect what they need.

    Results are a pure function of (eenv, seed, walker ids): uniforms come
    from per-walker counter-based streams keyed by the absolute step index
    (t0 offsets a continued run), so scheduling, worker counts and run
    segmentation cannot change them.
    """
    d = eenv.d
    if walker_ids is None:
        ids = np.arange(walker_id0, walker_id0 + n_walkers, dtype=np.int64)
    else:
        ids = np.asarray(walker_ids, dtype=np.int64)
        n_walkers = len(ids)
    wkeys = rng.walker_keys(seed, ids)
    ckeys = rng.mix64(wkeys ^ np.uint64(rng.TAG_COIN))
    pos = np.zeros((n_walkers, d), dtype=np.int64) if starts is None \
        else np.array(starts, dtype=np.int64).reshape(n_walkers, d).copy()
    for obs in observers:
        obs.begin(n_walkers, d, pos)
    dk = None if coin_kappa is None else d * coin_kappa
    for local_t in range(n_steps):
        t = t0 + local_t
        plus, minus, hold = eenv.axis_probs(pos)
        u_move = rng.uniforms(wkeys, 2 * t)
        coins = None
        if dk is None:
            # move = number of cumulative-probability columns <= u
            move = np.zeros(pos.shape[0], dtype=np.int8)
            acc = plus[:, 0].copy()
            move += u_move >= acc
            for i in range(1, d):
                acc += plus[:, i]
                move += u_move >= acc
            for i in range(d):
                acc += minus[:, i]
                move += u_move >= acc
            if np.isscalar(hold) and hold == 0.0:
                np.minimum(move, 2 * d - 1, out=move)
        else:
            if not (np.isscalar(hold) and hold == 0.0):
                raise DecompositionError("coin decomposition requires p_hold = 0")
            if min(plus.min(), minus.min()) < coin_kappa - 1e-12:
                raise DecompositionError("ellipticity below kappa at a visited site")
            u_coin = rng.uniforms(ckeys, t)
            coins = u_coin < dk
            scale = 1.0 - dk
            move = np.zeros(pos.shape[0], dtype=np.int8)
            acc = (plus[:, 0] - coin_kappa / 2.0) / scale
            move += u_move >= acc
            for i in range(1, d):
                acc += (plus[:, i] - coin_kappa / 2.0) / scale
                move += u_move >= acc
            for i in range(d):
                acc += (minus[:, i] - coin_kappa / 2.0) / scale
                move += u_move >= acc
            np.minimum(move, 2 * d - 1, out=move)
            uni = np.minimum((u_move * (2 * d)).astype(np.int8),
                             np.int8(2 * d - 1))
            move = np.where(coins, uni, move)
        for i in range(d):
            pos[:, i] += (move == i).astype(np.int64)
            pos[:, i] -= (move == d + i).astype(np.int64)
        for obs in observers:
            obs.step(t, pos, move, coins)
    for obs in observers:
        obs.end(pos)
    return pos


class Observer:
    def begin(self, n_walkers, d, pos):
        pass

    def step(self, t, pos, move, coins):
        pass

    def end(self, pos):
        pass


class SnapshotObserver(Observer):
    """Positions at selected times (time n means after n steps)."""

    def __init__(self, times):
        self.times = sorted(set(int(t) for t in times))
        self.snapshots = {}

    def begin(self, n_walkers, d, pos):
        if 0 in self.times:
            self.snapshots[0] = pos.copy()

    def step(self, t, pos, move, coins):
        if (t + 1) in self.times:
            self.snapshots[t + 1] = pos.copy()


class OriginVisitObserver(Observer):
    """Visit counts to the origin up to each time threshold (time 0 excluded)."""

    def __init__(self, thresholds):
        self.thresholds = sorted(int(t) for t in thresholds)
        self.counts = None
        self._running = None

    def begin(self, n_walkers, d, pos):
        self._running = np.zeros(n_walkers, dtype=np.int64)
        self.counts = np.zeros((len(self.thresholds), n_walkers), dtype=np.int64)

    def step(self, t, pos, move, coins):
        self._running += ~pos.any(axis=1)
        now = t + 1
        for k, thr in enumerate(self.thresholds):
            if now == thr:
                self.counts[k] = self._running


class AxisFirstPassageObserver(Observer):
    """First time the axis-0 displacement reaches each target value."""

    def __init__(self, targets):
        self.targets = [int(v) for v in targets]
        self.times = None
        self._x0 = None

    def begin(self, n_walkers, d, pos):
        self._x0 = pos[:, 0].copy()
        self.times = np.full((len(self.targets), n_walkers), -1, dtype=np.int64)

    def step(self, t, pos, move, coins):
        disp = pos[:, 0] - self._x0
        for k, target in enumerate(self.targets):
            row = self.times[k]
            hit = (row < 0) & (disp == target)
            if hit.any():
                row[hit] = t + 1


class BallExitObserver(Observer):
    """First exit time from the Euclidean ball |x - start| > r."""

    def __init__(self, radius: float):
        self.r2 = float(radius) ** 2
        self.times = None
        self.exit_positions = None
        self._start = None

    def begin(self, n_walkers, d, pos):
        self._start = pos.copy()
        self.times = np.full(n_walkers, -1, dtype=np.int64)
        self.exit_positions = np.zeros((n_walkers, d), dtype=np.int64)

    def step(self, t, pos, move, coins):
        delta = pos - self._start
        out = (delta * delta).sum(axis=1) > self.r2
        fresh = out & (self.times < 0)
        if fresh.any():
            self.times[fresh] = t + 1
            self.exit_positions[fresh] = pos[fresh]


class GirsanovObserver(Observer):
    """Accumulates log prod (1 + lambda ell . (X_j - X_{j-1})) per walker."""

    def __init__(self, lam: float, ell):
        self.lam = lam
        self.ell = np.asarray(ell, dtype=float)
        self.log_weight = None
        self._tilt = None

    def begin(self, n_walkers, d, pos):
        self.log_weight = np.zeros(n_walkers)
        self._tilt = np.concatenate([self.lam * self.ell, -self.lam * self.ell, [0.0]])
        if np.any(1.0 + self._tilt <= 0.0):
            raise ConfigurationError("1 + lambda ell.e must stay positive")
        self._log1p = np.log1p(self._tilt)

    def step(self, t, pos, move, coins):
        self.log_weight += self._log1p[move]


class MoveRecorder(Observer):
    """Stores move codes (and coin bits) for post-hoc path analysis."""

    def __init__(self, record_coins: bool = False):
        self.record_coins = record_coins
        self.moves = None
        self.coins = None
        self.starts = None

    def begin(self, n_walkers, d, pos):
        self.starts = pos.copy()
        self._rows = []
        self._crows = [] if self.record_coins else None

    def step(self, t, pos, move, coins):
        self._rows.append(move.copy())
        if self._crows is not None:
            self._crows.append(coins.copy())

    def end(self, pos):
        self.moves = np.asarray(self._rows, dtype=np.int8)
        del self._rows
        if self._crows is not None:
            self.coins = np.asarray(self._crows, dtype=bool)
            del self._crows

    def path(self, w: int, d: int) -> PathRecord:
        return PathRecord(start=self.starts[w], moves=self.moves[:, w], d=d)


class _FirstHitObserver(Observer):
    """Absolute first time each walker satisfies any stop condition."""

    def __init__(self, starts, axis_targets=None, ball_radius=None):
        self._starts = np.asarray(starts, dtype=np.int64)
        self.axis_targets = [int(v) for v in (axis_targets or [])]
        self.r2 = None if ball_radius is None else float(ball_radius) ** 2
        n = len(self._starts)
        self.time = np.full(n, -1, dtype=np.int64)
        self.which = np.full(n, -1, dtype=np.int64)
        self.position = np.zeros_like(self._starts)

    def step(self, t, pos, move, coins):
        pending = self.time < 0
        if not pending.any():
            return
        for k, target in enumerate(self.axis_targets):
            hit = pending & (pos[:, 0] - self._starts[:, 0] == target)
            if hit.any():
                self.time[hit] = t + 1
                self.which[hit] = k
                self.position[hit] = pos[hit]
                pending &= ~hit
        if self.r2 is not None:
            delta = pos - self._starts
            hit = pending & ((delta * delta).sum(axis=1) > self.r2)
            if hit.any():
                self.time[hit] = t + 1
                self.which[hit] = len(self.axis_targets)
                self.position[hit] = pos[hit]


def first_passage_ensemble(model, n_walkers: int, seed: int, horizon: int,
                           params=None, env_seeds=None, axis_targets=None,
                           ball_radius: float | None = None,
                           starts: np.ndarray | None = None,
                           segment: int = 8192):
    """First-passage times for an ensemble with early stopping.

    Walkers are dropped once they satisfy a stop condition (an axis-0
    displacement target or leaving the Euclidean ball), so the cost scales
    with the passage times rather than the horizon.  Segmentation cannot
    change the result: each walker's uniforms are a function of its id and
    the absolute step index.

    Returns (times, which, positions): -1 times flag walkers still pending at
    the horizon; `which` indexes the triggered condition (axis targets first,
    then the ball exit).
    """
    d = model.d if hasattr(model, "d") else len(starts[0])
    all_ids = np.arange(n_walkers, dtype=np.int64)
    pos = np.zeros((n_walkers, d), dtype=np.int64) if starts is None \
        else np.array(starts, dtype=np.int64).reshape(n_walkers, d)
    start_ref = pos.copy()
    times = np.full(n_walkers, -1, dtype=np.int64)
    which = np.full(n_walkers, -1, dtype=np.int64)
    fpos = np.zeros((n_walkers, d), dtype=np.int64)
    active = all_ids.copy()
    t0 = 0
    seg_len = min(segment, 128)
    while len(active) and t0 < horizon:
        n = min(seg_len, horizon - t0)
        seg_len = min(2 * seg_len, segment)
        if env_seeds is not None:
            eenv = EnsembleEnv(model, params=params, env_seeds=env_seeds[active])
        else:
            eenv = EnsembleEnv(model, params=params)
        obs = _FirstHitObserver(start_ref[active], axis_targets=axis_targets,
                                ball_radius=ball_radius)
        end_pos = run_ensemble(eenv, len(active), n, seed=seed,
                               observers=[obs], starts=pos[active],
                               walker_ids=active, t0=t0)
        hit = obs.time >= 0
        done_ids = active[hit]
        times[done_ids] = obs.time[hit]
        which[done_ids] = obs.which[hit]
        fpos[done_ids] = obs.position[hit]
        pos[active] = end_pos
        active = active[~hit]
        t0 += n
    return times, which, fpos


# ---------------------------------------------------------------------------
# path functionals
# ---------------------------------------------------------------------------


def exit_time_ball(env, start, r: float, seed: int, walker_id: int = 0,
                   max_steps: int | None = None):
    """First time the walk leaves the Euclidean ball of radius r; (tau, position).

    Requires hold-free kernels (the |X|^2 - n martingale argument behind the
    (r+1)^2 expectation bound needs every step to move).
    """
    penv = _adapt_env(env)
    d = penv.d
    cache = _KernelCache(penv)
    wkey = _walker_key_scalar(seed, walker_id)
    start = tuple(int(c) for c in start)
    pos = start
    vecs = [tuple(v) for v in move_vectors(d)]
    r2 = float(r) ** 2
    budget = max_steps if max_steps is not None else max(1000, int(40 * (r + 1) ** 2))
    for t in range(budget):
        cum = cache.cum(pos)
        if 1.0 - cum[2 * d - 1] > 1e-15:
            raise ConfigurationError("exit_time_ball requires p_hold = 0")
        u = rng.uniform_scalar(wkey, 2 * t)
        m = _select(cum, u)
        v = vecs[m]
        pos = tuple(p + dv for p, dv in zip(pos, v))
        if sum((a - b) ** 2 for a, b in zip(pos, start)) > r2:
            return t + 1, pos
    raise BudgetError(f"no exit from radius {r} within {budget} steps (at {pos})")


def first_passage(path: PathRecord, displacement: int, axis: int = 0):
    """First index with the given axis displacement, or None."""
    disp = path.axis_displacements(axis)
    hits = np.flatnonzero(disp == displacement)
    return int(hits[0]) if len(hits) else None


def level_hitting_times(path: PathRecord, axis: int = 0, spacing: int = 1):
    """Hitting times T_n of the levels {displacement = n * spacing}, n in Z.

    Returns (T_pos, T_neg): T_pos[k] is the first index at displacement
    +(k+1)*spacing, T_neg[k] at -(k+1)*spacing; -1 flags levels never reached.
    """
    if spacing < 1 or int(spacing) != spacing:
        raise ConfigurationError("spacing must be a positive integer")
    disp = path.axis_displacements(axis)
    out = []
    for sign in (1, -1):
        extreme = int(disp.max()) if sign == 1 else -int(disp.min())
        n_levels = extreme // spacing
        times = np.full(n_levels, -1, dtype=np.int64)
        if n_levels:
            lev = sign * disp // spacing
            exact = (sign * disp) % spacing == 0
            good = exact & (lev >= 1)
            # first time each level value appears
            idx = np.flatnonzero(good)
            levels_seen = lev[idx]
            order = np.argsort(levels_seen, kind="stable")
            levels_sorted = levels_seen[order]
            first = np.searchsorted(levels_sorted, np.arange(1, n_levels + 1), side="left")
            for k in range(n_levels):
                j = first[k]
                if j < len(levels_sorted) and levels_sorted[j] == k + 1:
                    times[k] = idx[order[j]]
        out.append(times)
    return out[0], out[1]


@dataclass
class LevelStats:
    """Level-visit statistics along the +axis direction, spacing 1.

    visit_times[i] holds the (sorted) times at which the path occupies level i
    (displacement i >= 0); first_hit[i] is T_i, with -1 for unreached levels.
    """

    visit_times: list
    first_hit: np.ndarray
    n_steps: int

    @property
    def max_level(self) -> int:
        return len(self.visit_times) - 1

    def _T(self, j: int) -> float:
        if j > self.max_level or self.first_hit[j] < 0:
            return float("inf")
        return float(self.first_hit[j])

    def visits_before(self, i: int, j: int) -> int:
        """N_{i,j}: visits to level i strictly before the first hit of level j."""
        if i > self.max_level:
            return 0
        return int(np.searchsorted(self.visit_times[i], self._T(j), side="left"))

    def dwell(self, i: int, l: int) -> float:
        """h_{i,l}: time between first and last visit to level i before T_{i+l}."""
        n = self.visits_before(i, i + l)
        if n == 0:
            return 0.0
        return float(self.visit_times[i][n - 1] - self.visit_times[i][0])

    def weighted_crossings(self, m: int, l: int) -> float:
        """H_{m,l} = sum_{i<l} N_{m+i, m+l} / (i+1)^2."""
        return sum(self.visits_before(m + i, m + l) / (i + 1) ** 2 for i in range(l))

    def fraction_good(self, M: int, l: int, a: float) -> float:
        """E_{M,l}(a): fraction of levels m <= M with dwell and crossings <= a."""
        good = sum(
            1 for m in range(M + 1)
            if self.dwell(m, l) <= a and self.weighted_crossings(m, l) <= a
        )
        return good / (M + 1)

    def to_csv_rows(self):
        for i, times in enumerate(self.visit_times):
            yield {"level": i, "first_hit": int(self.first_hit[i]),
                   "n_visits": len(times),
                   "last_visit": int(times[-1]) if len(times) else -1}


def level_stats(path: PathRecord, axis: int = 0) -> LevelStats:
    """Collect per-level visit times for the nonnegative levels."""
    disp = path.axis_displacements(axis)
    top = int(disp.max())
    visit_times = []
    nonneg = disp >= 0
    idx = np.flatnonzero(nonneg)
    lev = disp[idx]
    order = np.argsort(lev, kind="stable")
    lev_sorted = lev[order]
    t_sorted = idx[order]
    bounds = np.searchsorted(lev_sorted, np.arange(top + 2))
    first_hit = np.full(top + 1, -1, dtype=np.int64)
    for i in range(top + 1):
        times = t_sorted[bounds[i]:bounds[i + 1]]
        times = np.sort(times)
        visit_times.append(times)
        if len(times):
            first_hit[i] = times[0]
    return LevelStats(visit_times=visit_times, first_hit=first_hit,
                      n_steps=path.n_steps)


@dataclass
class StoppingReport:
    """Outcome of the quadratic level-visit budget stopping time."""

    time: int | None          # None when censored (no trigger within the path)
    cause: str                # "backtrack", "budget" or "censored"
    backtrack_time: int | None
    budget_time: int | None


def stopping_R(path: PathRecord, c5: float, axis: int = 0) -> StoppingReport:
    """First time the path either backtracks to its start level or exceeds
    the budget of c5*(j+1)^2 visits to some level j >= 0."""
    if c5 <= 0:
        raise ConfigurationError("c5 must be positive")
    disp = path.axis_displacements(axis)
    back = np.flatnonzero(disp[1:] <= 0)
    backtrack = int(back[0]) + 1 if len(back) else None
    stats = level_stats(path, axis)
    budget_time = None
    for j, times in enumerate(stats.visit_times):
        allowed = int(np.floor(c5 * (j + 1) ** 2))
        if len(times) > allowed:
            t = int(times[allowed])
            if budget_time is None or t < budget_time:
                budget_time = t
    candidates = [t for t in (backtrack, budget_time) if t is not None]
    if not candidates:
        return StoppingReport(time=None, cause="censored",
                              backtrack_time=None, budget_time=None)
    t = min(candidates)
    cause = "backtrack" if t == backtrack else "budget"
    return StoppingReport(time=t, cause=cause,
                          backtrack_time=backtrack, budget_time=budget_time)


def batch_mean_ci(values: np.ndarray, n_sigma: float = 3.0, n_batches: int = 32):
    """Mean with a normal-approximation half-width from batch means."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n < 2:
        return float(values.mean()) if n else float("nan"), float("inf")
    b = min(n_batches, n)
    batches = np.array_split(values, b)
    means = np.array([x.mean() for x in batches])
    se = means.std(ddof=1) / np.sqrt(b)
    return float(values.mean()), float(n_sigma * se)
