"""Regeneration constructions, slab laws, splitting representation."""

import math
from fractions import Fraction

import numpy as np
import pytest

from rwre import regeneration as reg
from rwre import walk
from rwre.environment import (EnvironmentModel, PerturbationParams,
                              PerturbedEnvironment)
from rwre.errors import (ConfigurationError, InputMismatchError,
                         TruncationError)

SRW = EnvironmentModel.srw(2)
TILT = PerturbationParams(lam=0.1, ell=(1.0, 0.0))


def _coins_all_ones(path, kappa=0.25):
    bits = np.ones(path.n_steps, dtype=np.uint8)
    return walk.CoinStream(bits=bits, kappa=kappa, path=path)


def test_L_regen_straight_path_hand_trace():
    # straight +e1 path with every coin 1: the first admissible time is L
    # (launch point at a running maximum, L coin-1 straight steps), and each
    # later time also regenerates, subject to tau_{k+1} - L >= tau_k
    p = walk.PathRecord((0, 0), np.zeros(12, dtype=np.int8), 2)
    seq = reg.detect_L_regenerations(p, _coins_all_ones(p),
                                     reg.LRegenConfig(L=3, c5=50, kappa=0.25,
                                                      horizon=12))
    taus = list(seq.taus())
    assert taus[0] == 3
    assert taus == [3, 6, 9, 12]
    assert seq.records[0].position == (3, 0)


def test_L_regen_backtrack_kills():
    # a path that immediately dips below its start never regenerates
    mv = np.array([2, 0, 0, 0, 0, 0], dtype=np.int8)   # -e1 then +e1 moves
    p = walk.PathRecord((0, 0), mv, 2)
    seq = reg.detect_L_regenerations(p, _coins_all_ones(p),
                                     reg.LRegenConfig(L=2, c5=50, kappa=0.25,
                                                      horizon=6))
    # records exist only after the dip; the candidate at the end survives
    for r in seq.records:
        assert r.tau >= 3
    # dipping at the very end kills everything
    mv2 = np.array([0, 0, 0, 2, 2, 2, 2], dtype=np.int8)
    p2 = walk.PathRecord((0, 0), mv2, 2)
    seq2 = reg.detect_L_regenerations(p2, _coins_all_ones(p2),
                                      reg.LRegenConfig(L=2, c5=50, kappa=0.25,
                                                       horizon=7))
    assert len(seq2) == 0


def test_L_regen_input_mismatch():
    p = walk.PathRecord((0, 0), np.zeros(5, dtype=np.int8), 2)
    bits = np.ones(3, dtype=np.uint8)
    coins = walk.CoinStream(bits=bits, kappa=0.25, path=p)
    with pytest.raises(InputMismatchError):
        reg.detect_L_regenerations(p, coins,
                                   reg.LRegenConfig(L=2, c5=50, kappa=0.25,
                                                    horizon=5))


def test_L_regen_ballistic_monte_carlo():
    # tilted walks regenerate with positive frequency
    model = EnvironmentModel.dirichlet(2, 0.125, 5)
    params = PerturbationParams(lam=0.2, ell=(1.0, 0.0))
    penv = PerturbedEnvironment(model, params)
    found = 0
    for w in range(5):
        path, coins = walk.simulate_with_coins(penv, 0.1, (0, 0), 30_000,
                                               seed=9, walker_id=w)
        seq = reg.detect_L_regenerations(
            path, coins, reg.LRegenConfig(L=2, c5=50, kappa=0.1,
                                          horizon=30_000))
        found += len(seq)
    assert found > 0


def test_bulk_regens_match_full_detector_with_big_budget():
    model = EnvironmentModel.dirichlet(2, 0.125, 15)
    params = PerturbationParams(lam=0.25, ell=(1.0, 0.0))
    penv = PerturbedEnvironment(model, params)
    path, coins = walk.simulate_with_coins(penv, 0.09, (0, 0), 20_000, seed=3)
    cfg = reg.LRegenConfig(L=1, c5=1e12, kappa=0.09, horizon=20_000)
    seq = reg.detect_L_regenerations(path, coins, cfg)
    x1 = path.axis_displacements(0)
    straight = (path.moves == 0) & (coins.bits == 1)
    bulk = reg.straight_run_regens_bulk(x1, straight, 1)
    assert list(seq.taus()) == list(bulk)
    assert len(bulk) > 5


def test_level_spacing():
    assert reg.level_spacing(0.1, 1.0) == pytest.approx(0.1)
    assert reg.level_spacing(0.3, 1.0) == pytest.approx(0.25)
    assert round(0.5 / reg.level_spacing(0.17, 0.83)) == 0.5 / reg.level_spacing(0.17, 0.83)


def test_slab_laws_symmetric_for_srw():
    penv = PerturbedEnvironment(SRW, PerturbationParams(0.5, (1.0, 0.0)))
    fwd, mu1 = reg.slab_hitting_distributions(penv, (0, 0), 0.5, W=24)
    # 1/lambda1 = 2: tiny slab; symmetric laws with zero mean offset
    assert fwd.deficit <= 1e-6
    assert abs(fwd.probs @ fwd.offsets[:, 0]) <= 1e-12
    assert np.allclose(mu1.probs, mu1.probs[::-1], atol=1e-12)
    assert mu1.probs.sum() == pytest.approx(1.0)


def test_slab_laws_d1_point_mass():
    srw1 = EnvironmentModel.srw(1)
    penv = PerturbedEnvironment(srw1, PerturbationParams(0.1, (1.0,)))
    fwd, mu1 = reg.slab_hitting_distributions(penv, (0,), 0.1, W=4)
    assert len(fwd.probs) == 1
    assert fwd.probs[0] == pytest.approx(1.0, abs=1e-6)
    assert mu1.probs[0] == pytest.approx(1.0)


def test_slab_green_matches_dense_fundamental_matrix():
    # exact enumeration via the dense fundamental matrix on a small slab
    model = EnvironmentModel.dirichlet(2, 0.1, 8)
    penv = PerturbedEnvironment(model, PerturbationParams(0.3, (1.0, 0.0)))
    W, row_lo, row_hi = 3, -2, 1
    lat, top, bottom, lateral = reg._green_slab(penv, (0, 0), row_lo, row_hi,
                                                W, 0)
    lat_b, top_b, bottom_b, lateral_b = reg._green_slab_banded(
        penv, (0, 0), row_lo, row_hi, W, 0)
    np.testing.assert_allclose(top, top_b, atol=1e-13)
    # dense oracle
    n_rows = row_hi - row_lo + 1
    n_lat = 2 * W + 1
    sites = [(r, c) for r in range(row_lo, row_hi + 1)
             for c in range(-W, W + 1)]
    index = {s: i for i, s in enumerate(sites)}
    n = len(sites)
    Q = np.zeros((n, n))
    up = np.zeros((n, n_lat))
    for s, i in index.items():
        probs = penv.move_probs_at(np.asarray(s)[None, :])[0]
        for code, delta in ((0, (1, 0)), (1, (0, 1)), (2, (-1, 0)),
                            (3, (0, -1))):
            nb = (s[0] + delta[0], s[1] + delta[1])
            if nb in index:
                Q[i, index[nb]] = probs[code]
            elif nb[0] == row_hi + 1 and abs(nb[1]) <= W:
                up[i, nb[1] + W] = probs[code]
    F = np.linalg.inv(np.eye(n) - Q)
    start = index[(0, 0)]
    top_oracle = F[start] @ up
    np.testing.assert_allclose(top, top_oracle, atol=1e-10)


def test_slab_deficit_decreases_with_W():
    model = EnvironmentModel.dirichlet(2, 0.1, 4)
    penv = PerturbedEnvironment(model, PerturbationParams(0.3, (1.0, 0.0)))
    deficits = []
    for W in (8, 16):
        fwd, _ = reg.slab_hitting_distributions(penv, (0, 0), 0.25, W,
                                                deficit_tol=1.0)
        deficits.append(fwd.deficit)
    assert deficits[1] < deficits[0]


def test_slab_truncation_error_raised():
    penv = PerturbedEnvironment(SRW, TILT)
    with pytest.raises(TruncationError):
        reg.slab_hitting_distributions(penv, (0, 0), 0.1, W=12,
                                       deficit_tol=1e-6)


def test_estimate_c1_properties():
    penv = PerturbedEnvironment(SRW, PerturbationParams(0.3, (1.0, 0.0)))
    c1 = reg.estimate_c1(penv, 0.25, 48, [(0, 0)])
    assert 0 < c1 <= 1.0
    # identical kernels at every site: estimate identical across sites
    c1b = reg.estimate_c1(penv, 0.25, 48, [(5, -9)])
    assert c1 == pytest.approx(c1b, abs=1e-12)
    # iid environment: still strictly positive
    m = EnvironmentModel.dirichlet(2, 0.1, 10)
    penv2 = PerturbedEnvironment(m, TILT)
    c1c = reg.estimate_c1(penv2, 0.1, 72, [(0, 0)], deficit_tol=1e-3)
    assert c1c > 0


def test_beta_regen_invariants_and_coin_frequency():
    model = EnvironmentModel.dirichlet(2, 0.1, 33)
    cfg = reg.BetaRegenConfig(beta=0.2, lam=0.1, ell=(1.0, 0.0),
                              horizon=60_000, max_regens=6)
    seq = reg.detect_beta_regenerations(model, cfg, seed=2)
    assert len(seq) >= 1
    m = cfg.spacing
    taus = seq.taus()
    assert np.all(np.diff(taus) > 0)
    for r in seq.records:
        assert r.delta >= 0 and r.tau == r.tau_tilde + r.delta
    # level gap between tau-tilde and tau is exactly one spacing
    path = walk.simulate(PerturbedEnvironment(model, PerturbationParams(
        cfg.lam, cfg.ell)), (0, 0), seq.horizon, seed=2, walker_id=0)
    disp = path.axis_displacements(0)
    for r in seq.records:
        assert disp[r.tau] - disp[r.tau_tilde] == m
        # never backtracked a full level below within the horizon (re-scan)
        assert disp[r.tau:].min() > disp[r.tau] - m
    # marginal coin frequency is exactly beta: over many segments the rate
    # of accepted coins concentrates there
    ones = seq.meta["n_coin_ones"]
    ntot = seq.meta["n_coin_bounds"]
    sigma = math.sqrt(0.2 * 0.8 / ntot)
    assert abs(ones / ntot - 0.2) <= 4 * sigma


def test_beta_regen_requires_upward_tilt():
    with pytest.raises(ConfigurationError):
        reg.BetaRegenConfig(beta=0.1, lam=0.1, ell=(-1.0, 0.0), horizon=10)
    with pytest.raises(ConfigurationError):
        reg.BetaRegenConfig(beta=1.1, lam=0.1, ell=(1.0, 0.0), horizon=10)


def test_permutation_test_calibration():
    gen = np.random.default_rng(5)
    x = gen.normal(size=200)
    y = gen.normal(size=200)
    p = reg.permutation_independence_test(x, y, seed=1, n_shuffles=2000)
    assert p > 0.01
    # strongly dependent data is flagged
    p2 = reg.permutation_independence_test(x, x + 0.1 * y, seed=1,
                                           n_shuffles=2000)
    assert p2 < 0.01


def test_split_representation_exact():
    delta, mu, z = reg.split_representation([0.5, 0.5], [0.25, 0.75], 0.5)
    assert z == [0.75, 0.25]
    # trivial case nu = mu
    _, _, z2 = reg.split_representation([0.3, 0.7], [0.3, 0.7], 0.5)
    assert z2 == [0.3, 0.7]
    # rational arithmetic is exact
    nu = [Fraction(1, 2), Fraction(1, 2)]
    mu2 = [Fraction(1, 4), Fraction(3, 4)]
    a = Fraction(1, 2)
    delta3, mu3, z3 = reg.split_representation(nu, mu2, a)
    recon = [a * mv + (1 - a) * zv for mv, zv in zip(mu3, z3)]
    assert recon == nu
    assert z3 == [Fraction(3, 4), Fraction(1, 4)]
    with pytest.raises(ConfigurationError):
        reg.split_representation([0.9, 0.1], [0.1, 0.9], 0.5)


def test_split_sampler_total_variation():
    nu = [0.5, 0.3, 0.2]
    mu = [0.4, 0.3, 0.3]
    draw = reg.split_sampler(nu, mu, 0.5, seed=3)
    counts = np.zeros(3)
    n = 200_000
    for i in range(n):
        counts[draw(i)] += 1
    tv = 0.5 * np.abs(counts / n - np.asarray(nu)).sum()
    assert tv < 0.005
