"""Site percolation of low-ellipticity sites and the big-jump exit chain.

A site is open when its smallest axis probability falls below a threshold;
open sites form clusters whose diameters control how far the stationary
density can spike.  Through every open cluster run monotone paths using only
steps of probability at least xi0 (one for each of the 2^d sign patterns);
the union of these paths supports an exit chain whose one-jump kernel is
again balanced, which is what lets maximum-principle machinery pass through
the low-ellipticity pockets.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import rng
from .environment import EnvironmentModel
from .errors import ConfigurationError, ModelViolationError, SolverError
from .walk import move_vectors


class UnionFind:
    """Union by size with path compression over arbitrary hashable items."""

    def __init__(self, items):
        self.parent = {x: x for x in items}
        self.size = {x: 1 for x in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


@dataclass
class Cluster:
    label: int
    sites: list
    boundary: list            # neighbors of the cluster outside it
    diameter: int             # l1 diameter: max over (site, boundary) pairs
    censored: bool            # touches the window edge; true diameter unknown


@dataclass
class ClusterMap:
    window_lo: tuple
    window_hi: tuple
    open_sites: set
    labels: dict              # open site -> cluster label
    clusters: dict            # label -> Cluster
    eps0: float

    def cluster_of(self, site) -> Cluster | None:
        lbl = self.labels.get(tuple(site))
        return self.clusters[lbl] if lbl is not None else None

    def diameter_of(self, site) -> int:
        c = self.cluster_of(site)
        return c.diameter if c is not None else 0


def window_sites(lo, hi):
    axes = [range(int(a), int(b) + 1) for a, b in zip(lo, hi)]
    return [tuple(p) for p in itertools.product(*axes)]


def classify_and_cluster(model, lo, hi, eps0: float) -> ClusterMap:
    """Open/closed classification on the box [lo, hi] plus union-find cluster
    labels, boundaries and l1 diameters.

    `model` may be an EnvironmentModel or a TorusEnvironment; openness is
    min axis probability < eps0 and edges require both endpoints open.
    """
    lo = tuple(int(x) for x in lo)
    hi = tuple(int(x) for x in hi)
    d = len(lo)
    sites = np.asarray(window_sites(lo, hi), dtype=np.int64)
    open_mask = model.p_plus_at(sites).min(axis=1) < eps0
    open_sites = {tuple(s) for s, o in zip(sites, open_mask) if o}
    uf = UnionFind(open_sites)
    for s in open_sites:
        for i in range(d):
            nb = list(s)
            nb[i] += 1
            nb = tuple(nb)
            if nb in open_sites:
                uf.union(s, nb)
    groups: dict = {}
    for s in open_sites:
        groups.setdefault(uf.find(s), []).append(s)
    clusters = {}
    labels = {}
    for k, (root, members) in enumerate(sorted(groups.items())):
        members = sorted(members)
        mset = set(members)
        boundary = set()
        censored = False
        for s in members:
            for i in range(d):
                for sign in (1, -1):
                    nb = list(s)
                    nb[i] += sign
                    nb = tuple(nb)
                    if nb not in mset:
                        boundary.add(nb)
            if any(c == a or c == b for c, a, b in zip(s, lo, hi)):
                censored = True
        diameter = max(
            sum(abs(a - b) for a, b in zip(s, y))
            for s in members for y in boundary)
        clusters[k] = Cluster(label=k, sites=members,
                              boundary=sorted(boundary), diameter=diameter,
                              censored=censored)
        for s in members:
            labels[s] = k
    return ClusterMap(window_lo=lo, window_hi=hi, open_sites=open_sites,
                      labels=labels, clusters=clusters, eps0=eps0)


def flood_fill_labels(open_sites: set, d: int) -> dict:
    """Independent labeling oracle: breadth-first flood fill."""
    labels = {}
    nxt = 0
    for seed in sorted(open_sites):
        if seed in labels:
            continue
        frontier = [seed]
        labels[seed] = nxt
        while frontier:
            s = frontier.pop()
            for i in range(d):
                for sign in (1, -1):
                    nb = list(s)
                    nb[i] += sign
                    nb = tuple(nb)
                    if nb in open_sites and nb not in labels:
                        labels[nb] = nxt
                        frontier.append(nb)
        nxt += 1
    return labels


# ---------------------------------------------------------------------------
# reach probabilities q_n
# ---------------------------------------------------------------------------


def sphere_size(n: int, d: int) -> int:
    """Number of sites with sup-norm exactly n."""
    return (2 * n + 1) ** d - (2 * n - 1) ** d if n >= 1 else 1


def estimate_qn(model: EnvironmentModel, eps0: float, n_values, trials: int,
                seed: int, batch: int = 4096) -> dict:
    """Monte Carlo estimates of q_n = P(the origin's open cluster closure
    reaches the sup-norm sphere of radius n), regenerating the environment
    every trial (the probability is over the environment law).

    Returns per-n estimates with 3-sigma CIs and a decay-rate fit of
    -log q_n against n.
    """
    n_values = sorted(int(n) for n in n_values)
    d = model.d
    if d != 2:
        return _estimate_qn_generic(model, eps0, n_values, trials, seed)
    n_max = n_values[-1]
    side = 2 * n_max + 1
    axes = [np.arange(-n_max, n_max + 1)] * 2
    mesh = np.meshgrid(*axes, indexing="ij")
    base_sites = np.stack([m.ravel() for m in mesh], axis=1)
    sup = np.abs(base_sites).max(axis=1).reshape(side, side)
    hits = {n: 0 for n in n_values}
    struct = ndimage.generate_binary_structure(2, 1)
    done = 0
    while done < trials:
        b = min(batch, trials - done)
        env_seeds = np.array([rng.spawn_seed(seed, 0x9A, done + i)
                              for i in range(b)], dtype=np.uint64)
        open_threshold = _open_mask_batch(model, base_sites, env_seeds, eps0)
        for i in range(b):
            grid = open_threshold[i].reshape(side, side)
            if not grid[n_max, n_max]:
                continue
            lab, _ = ndimage.label(grid, structure=struct)
            mine = lab == lab[n_max, n_max]
            reach = int(sup[mine].max())
            for n in n_values:
                if reach >= n - 1:
                    hits[n] += 1
        done += b
    return _qn_table(hits, n_values, trials, d)


def _open_mask_batch(model, base_sites, env_seeds, eps0):
    """(n_envs, n_sites) openness mask with a fresh environment per row."""
    n_sites = base_sites.shape[0]
    out = np.empty((len(env_seeds), n_sites), dtype=bool)
    h0 = rng.mix64(env_seeds)
    bases = rng.mix64(h0 ^ np.uint64(rng.TAG_ENV))
    for i in range(len(env_seeds)):
        keys = model.site_stream_keys(base_sites,
                                      np.full(n_sites, bases[i], dtype=np.uint64))
        out[i] = model.p_plus_from_keys(keys).min(axis=1) < eps0
    return out


def _estimate_qn_generic(model, eps0, n_values, trials, seed):
    d = model.d
    n_max = n_values[-1]
    hits = {n: 0 for n in n_values}
    for trial in range(trials):
        m = model.with_seed(rng.spawn_seed(seed, 0x9A, trial))
        cm = classify_and_cluster(m, (-n_max,) * d, (n_max,) * d, eps0)
        c = cm.cluster_of((0,) * d)
        if c is None:
            continue
        reach = max(max(abs(v) for v in s) for s in c.sites)
        for n in n_values:
            if reach >= n - 1:
                hits[n] += 1
    return _qn_table(hits, n_values, trials, d)


def _qn_table(hits, n_values, trials, d):
    table = {}
    for n in n_values:
        q = hits[n] / trials
        se = math.sqrt(max(q * (1 - q), 1e-12) / trials)
        table[n] = {"q": q, "hits": hits[n], "trials": trials,
                    "three_sigma": 3 * se}
    xs = [n for n in n_values if hits[n] > 0]
    fit = None
    if len(xs) >= 2:
        ys = [-math.log(table[n]["q"]) for n in xs]
        slope, intercept = np.polyfit(xs, ys, 1)
        fit = {"phi": float(slope), "intercept": float(intercept)}
    return {"table": table, "fit": fit, "d": d}


# ---------------------------------------------------------------------------
# monotone paths and the exit kernel
# ---------------------------------------------------------------------------


@dataclass
class LambdaSet:
    base: tuple
    paths: dict               # sign pattern -> list of sites (path)
    targets: dict             # sign pattern -> endpoint on the cluster boundary
    sites: list               # union of the path points

    def __contains__(self, site):
        return tuple(site) in self._site_set

    def __post_init__(self):
        self._site_set = set(self.sites)


def build_lambda(model, cluster_map: ClusterMap, x, xi0: float) -> LambdaSet:
    """Monotone xi0-admissible paths from x through its open cluster, one per
    sign pattern, each maximizing the l1 distance to its boundary endpoint
    (lexicographic tie-break), plus their union.
    """
    x = tuple(int(c) for c in x)
    cluster = cluster_map.cluster_of(x)
    if cluster is None:
        raise ConfigurationError(f"{x} is not an open site")
    allowed = set(cluster.sites)
    boundary = set(cluster.boundary)
    d = len(x)
    paths, targets = {}, {}
    for kappa in itertools.product((1, -1), repeat=d):
        best = _kappa_path(model, x, kappa, allowed, boundary, xi0)
        if best is None:
            raise ModelViolationError(
                f"no monotone path with steps >= {xi0} leaves the cluster "
                f"at {x} for sign pattern {kappa}")
        paths[kappa] = best
        targets[kappa] = best[-1]
    union = sorted({s for p in paths.values() for s in p})
    return LambdaSet(base=x, paths=paths, targets=targets, sites=union)


def _kappa_path(model, x, kappa, allowed, boundary, xi0):
    """BFS over steps with probability >= xi0 moving only in the kappa
    directions; returns the path to the farthest boundary site reached."""
    d = len(x)
    parents = {x: None}
    frontier = [x]
    best_target = None
    best_dist = -1
    while frontier:
        nxt = []
        for s in sorted(frontier):
            p = model.kernel_at(s).p_plus
            for i in range(d):
                if p[i] < xi0:
                    continue
                nb = list(s)
                nb[i] += kappa[i]
                nb = tuple(nb)
                if nb in parents:
                    continue
                if nb in boundary:
                    parents[nb] = s
                    dist = sum(abs(a - b) for a, b in zip(nb, x))
                    cand = _unwind(parents, nb)
                    if dist > best_dist or (dist == best_dist
                                            and cand < _unwind(parents, best_target)):
                        best_dist = dist
                        best_target = nb
                elif nb in allowed:
                    parents[nb] = s
                    nxt.append(nb)
        frontier = nxt
    if best_target is None:
        return None
    return _unwind(parents, best_target)


def _unwind(parents, site):
    out = []
    while site is not None:
        out.append(site)
        site = parents[site]
    return out[::-1]


def exit_kernel(model, lam_set: LambdaSet) -> dict:
    """Exit law a(x, y) = P(the walk started at x leaves the path union at y),
    by an exact absorption solve on the union.

    The optional-stopping identity for the balanced walk makes the exit law
    balanced: sum_y a(x,y) (y - x) = 0.
    """
    sites = lam_set.sites
    index = {s: i for i, s in enumerate(sites)}
    d = len(lam_set.base)
    n = len(sites)
    moves = move_vectors(d)
    Q = np.zeros((n, n))
    targets = {}
    ext = []
    for i, s in enumerate(sites):
        probs = model.kernel_at(s).move_probs()
        for code in range(2 * d + 1):
            w = probs[code]
            if w == 0:
                continue
            nb = tuple(np.asarray(s) + moves[code])
            j = index.get(nb)
            if j is not None:
                Q[i, j] += w
            else:
                key = (i, nb)
                targets[key] = targets.get(key, 0.0) + w
                ext.append(nb)
    start = index[lam_set.base]
    g = np.linalg.solve(np.eye(n) - Q.T, np.eye(n)[start])
    law = {}
    for (i, nb), w in targets.items():
        law[nb] = law.get(nb, 0.0) + g[i] * w
    total = sum(law.values())
    if abs(total - 1.0) > 1e-10:
        raise SolverError(f"exit law mass {total} != 1")
    return law


def exit_kernel_balance(law: dict, base) -> np.ndarray:
    base = np.asarray(base, dtype=float)
    out = np.zeros_like(base)
    for y, w in law.items():
        out += w * (np.asarray(y, dtype=float) - base)
    return out


# ---------------------------------------------------------------------------
# density control through clusters
# ---------------------------------------------------------------------------


def check_phi_control(phi, cluster_map: ClusterMap, xi0: float) -> dict:
    """Verify, for every open site x of the window with cluster diameter at
    most N, that the stationary density obeys
        phi(x) <= xi0^{-diam} * sum of phi over the cluster boundary in the box.

    Sites whose diameter exceeds N (or whose cluster is window-censored) are
    skipped with a flag, since the inequality's hypothesis fails there.
    """
    env = phi.env
    N = phi.N
    if N is None:
        raise ConfigurationError("density must live on a centered cube")
    grid = phi.grid()

    def phi_at(site):
        return float(grid[env.wrap_index(site)])

    checked, skipped, violations = 0, 0, []
    box = lambda s: all(-N <= c <= N for c in s)
    for x in cluster_map.open_sites:
        if not box(x):
            continue
        cluster = cluster_map.cluster_of(x)
        l_x = cluster.diameter
        if l_x > N or cluster.censored:
            skipped += 1
            continue
        rhs = xi0 ** (-l_x) * sum(
            phi_at(y) for y in cluster.boundary if box(y))
        lhs = phi_at(x)
        checked += 1
        if lhs > rhs + 1e-9:
            violations.append({"site": x, "lhs": lhs, "rhs": rhs,
                               "diameter": l_x})
    return {"checked": checked, "skipped": skipped,
            "violations": violations, "ok": not violations}
