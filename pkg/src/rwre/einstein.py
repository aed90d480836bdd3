"""Einstein-relation experiments: velocity under a small tilt, rescaled means,
the importance weight connecting tilted and untilted laws, and exact
gambler's-ruin formulas for the level process.

The mobility-diffusivity identity under test: as the tilt strength goes to
zero, velocity / strength approaches the equilibrium diffusivity applied to
the tilt direction.  At each finite strength the experiments report estimates
with batch-mean confidence intervals and the exact one-step-drift references
where those exist.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .environment import EnvironmentModel, PerturbationParams
from .errors import ConfigurationError
from .regeneration import level_spacing
from .walk import (EnsembleEnv, GirsanovObserver, PathRecord,
                   batch_mean_ci, run_ensemble)


def annealed_seeds(model: EnvironmentModel, n_walkers: int, seed: int):
    """Per-walker environment seeds (None for a homogeneous model)."""
    if model.kind == "homogeneous":
        return None
    return rng.mix64(np.uint64(rng.stream_key(seed, 0xE2))
                     + np.arange(n_walkers, dtype=np.uint64))


def _annealed_env(model: EnvironmentModel, n_walkers: int, seed: int,
                  params: PerturbationParams | None) -> EnsembleEnv:
    env_seeds = annealed_seeds(model, n_walkers, seed)
    if env_seeds is None:
        return EnsembleEnv(model, params=params)
    return EnsembleEnv(model, params=params, env_seeds=env_seeds)


@dataclass
class VelocityEstimate:
    per_axis: np.ndarray
    ci: np.ndarray
    lam: float
    ell: tuple
    horizon: int
    walkers: int
    quenched: bool


def velocity(model: EnvironmentModel, lam: float, ell, horizon: int,
             walkers: int, seed: int, quenched: bool = False) -> VelocityEstimate:
    """Estimate the asymptotic velocity of the tilted walk as X_T / T.

    Annealed by default (each walker owns a fresh environment); a quenched
    run keeps one environment and varies only the walk noise.
    """
    params = PerturbationParams(lam=lam, ell=tuple(ell)) if lam > 0 else None
    if lam > 0 and horizon < 10 / lam ** 2:
        raise ConfigurationError("horizon must be at least 10 / lambda^2")
    eenv = EnsembleEnv(model, params=params) if quenched \
        else _annealed_env(model, walkers, seed, params)
    pos = run_ensemble(eenv, walkers, horizon, seed=rng.spawn_seed(seed, 0xF1))
    v = pos.astype(float) / horizon
    per_axis = v.mean(axis=0)
    ci = np.array([batch_mean_ci(v[:, i])[1] for i in range(model.d)])
    return VelocityEstimate(per_axis=per_axis, ci=ci, lam=lam, ell=tuple(ell),
                            horizon=horizon, walkers=walkers, quenched=quenched)


@dataclass
class ERPoint:
    """One point of the response curve: estimate of E[X_{t/lam^2}] * lam / t."""

    lam: float
    t: float
    ell: tuple
    estimate: np.ndarray
    ci: np.ndarray
    n_steps: int              # the rounded step count ceil(t / lam^2)
    walkers: int
    seed: int
    quenched: bool


def rescaled_mean(model: EnvironmentModel, lam: float, ell, t: float,
                  walkers: int, seed: int, quenched: bool = False) -> ERPoint:
    """Estimate E[X_{t/lam^2}] * lam / t per axis (the finite-strength
    response whose small-lam limit is the diffusivity applied to ell)."""
    if t <= 0 or not (0 < lam < 1):
        raise ConfigurationError("need t > 0 and lam in (0, 1)")
    params = PerturbationParams(lam=lam, ell=tuple(ell))
    n_steps = math.ceil(t / lam ** 2)
    eenv = EnsembleEnv(model, params=params) if quenched \
        else _annealed_env(model, walkers, seed, params)
    pos = run_ensemble(eenv, walkers, n_steps, seed=rng.spawn_seed(seed, 0xF2))
    scaled = pos.astype(float) * lam / t
    est = scaled.mean(axis=0)
    ci = np.array([batch_mean_ci(scaled[:, i])[1] for i in range(model.d)])
    return ERPoint(lam=lam, t=t, ell=tuple(ell), estimate=est, ci=ci,
                   n_steps=n_steps, walkers=walkers, seed=seed,
                   quenched=quenched)


def girsanov_weight(path: PathRecord, lam: float, ell, t: float) -> tuple:
    """Log importance weight G = sum_{j<=ceil(t)} log(1 + lam ell.step_j)
    turning untilted path expectations into tilted ones; returns (G, e^G)."""
    ell = np.asarray(ell, dtype=float)
    n = math.ceil(t)
    if n > path.n_steps:
        raise ConfigurationError("path shorter than ceil(t)")
    d = path.d
    tilt = np.concatenate([lam * ell, -lam * ell, [0.0]])
    if np.any(1.0 + tilt <= 0.0):
        raise ConfigurationError("1 + lam ell.e must stay positive")
    g = float(np.log1p(tilt)[path.moves[:n]].sum())
    return g, math.exp(g)


def girsanov_normalization(model: EnvironmentModel, lam: float, ell, t: float,
                           walkers: int, seed: int) -> dict:
    """Empirical check of E[e^G] = 1 over untilted walks (exact identity)."""
    obs = GirsanovObserver(lam, ell)
    eenv = _annealed_env(model, walkers, seed, None)
    run_ensemble(eenv, walkers, math.ceil(t), seed=rng.spawn_seed(seed, 0xF3),
                 observers=[obs])
    w = np.exp(obs.log_weight)
    mean, hw = batch_mean_ci(w)
    return {"mean": mean, "three_sigma": hw, "t": t, "lam": lam,
            "walkers": walkers, "ok": abs(mean - 1.0) <= hw}


def hitting_formula(lam: float, ell1: float, n: int, m: int) -> float:
    """Exact probability that the level process reaches +n levels before -m.

    The e_1 jumps of the tilted walk form a lazy one-dimensional walk whose
    left/right odds are (1 - lam ell1)/(1 + lam ell1) independently of the
    site, so the ruin probability is the classical ratio formula with
    q = ((1 - lam ell1)/(1 + lam ell1))^(1/lambda1).
    """
    if n < 0 or m < 0 or n + m == 0:
        raise ConfigurationError("need nonnegative n, m with n + m > 0")
    lambda1 = level_spacing(lam, ell1)
    q = ((1.0 - lam * ell1) / (1.0 + lam * ell1)) ** (1.0 / lambda1)
    return (1.0 - q ** m) / (1.0 - q ** (m + n))


def hitting_formula_oracle(lam: float, ell1: float, n: int, m: int,
                           hold: float = 0.5) -> float:
    """Absorption solve of the lazy one-dimensional chain on the level grid
    {-m/lambda1, ..., n/lambda1}; independent of the formula above."""
    lambda1 = level_spacing(lam, ell1)
    spacing = round(1 / lambda1)
    lo, hi = -m * spacing, n * spacing
    size = hi - lo - 1
    if size <= 0:
        return 1.0 if n == 0 else 0.0
    move = (1.0 - hold) / 2.0
    p_right = move * (1.0 + lam * ell1)
    p_left = move * (1.0 - lam * ell1)
    A = np.zeros((size, size))
    b = np.zeros(size)
    for i in range(size):
        A[i, i] = 1.0 - hold
        if i + 1 < size:
            A[i, i + 1] = -p_right
        else:
            b[i] += p_right
        if i - 1 >= 0:
            A[i, i - 1] = -p_left
    u = np.linalg.solve(A, b)
    return float(u[-lo - 1])


def hitting_tail_check(model: EnvironmentModel, lam: float, ell, m: int,
                       t_values, walkers: int, seed: int, kappa: float) -> dict:
    """Empirical tail of the m-th level passage time against the bound
    2 exp(-t kappa^2 / (2m)) at each scaled time t."""
    params = PerturbationParams(lam=lam, ell=tuple(ell))
    lambda1 = level_spacing(lam, ell[0])
    spacing = round(1 / lambda1)
    t_values = sorted(float(t) for t in t_values)
    horizon = int(math.ceil(t_values[-1] / lambda1 ** 2)) + 1
    from .walk import first_passage_ensemble
    times, _, _ = first_passage_ensemble(
        model, walkers, rng.spawn_seed(seed, 0xF4), horizon, params=params,
        env_seeds=annealed_seeds(model, walkers, seed),
        axis_targets=[m * spacing])
    rows = []
    for t in t_values:
        cut = t / lambda1 ** 2
        emp = float(((times < 0) | (times >= cut)).mean())
        bound = 2.0 * math.exp(-t * kappa ** 2 / (2 * m))
        rows.append({"t": t, "empirical": emp, "bound": bound,
                     "ok": emp <= min(bound, 1.0) + 1e-12})
    return {"rows": rows, "m": m, "walkers": walkers, "lambda1": lambda1}
