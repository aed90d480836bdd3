"""Counter-based deterministic randomness.

Every random quantity in this package is a pure function of a 64-bit master
seed and a handful of integer labels (stream tag, site coordinates, walker id,
step counter).  This makes environments storage-free and infinite, lets any
number of workers draw the same numbers in any order, and makes every
experiment bit-reproducible regardless of scheduling.

The mixer is splitmix64.  Streams are opened by folding labels into the state
one word at a time; draws within a stream advance a Weyl counter.  Scalar and
vectorized code paths share the exact same arithmetic so that a kernel sampled
one site at a time is bit-identical to the same kernel sampled in bulk.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

# Stream tags keep unrelated uses of the same seed statistically disjoint.
TAG_ENV = 0x01
TAG_TRAP = 0x02
TAG_WALK = 0x03
TAG_COIN = 0x04
TAG_BETA_COIN = 0x05
TAG_BOUNDARY = 0x06
TAG_TASK = 0x07

_U_GOLDEN = np.uint64(GOLDEN)
# odd multipliers folding lattice coordinates into a site key, one per axis
AXIS_CONSTANTS = tuple(np.uint64(c) for c in (
    0x9E3779B97F4A7C15, 0xC2B2AE3D27D4EB4F, 0x165667B19E3779F9,
    0x27D4EB2F165667C5, 0x85EBCA77C2B2AE63, 0x2545F4914F6CDD1D,
    0xFF51AFD7ED558CCD,
))
_U_MIX1 = np.uint64(MIX1)
_U_MIX2 = np.uint64(MIX2)
_SHIFT30 = np.uint64(30)
_SHIFT27 = np.uint64(27)
_SHIFT31 = np.uint64(31)
_SHIFT11 = np.uint64(11)
_INV53 = float(2.0 ** -53)


def mix64_scalar(z: int) -> int:
    """splitmix64 finalizer on a plain Python integer."""
    z = (z + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = (z + _U_GOLDEN)
    z = (z ^ (z >> _SHIFT30)) * _U_MIX1
    z = (z ^ (z >> _SHIFT27)) * _U_MIX2
    return z ^ (z >> _SHIFT31)


def stream_key(seed: int, *labels: int) -> int:
    """Open a stream: hash (seed, labels...) into a 64-bit key."""
    h = mix64_scalar(seed & MASK64)
    for w in labels:
        h = mix64_scalar(h ^ (w & MASK64))
    return h


def site_keys(seed: int, tag: int, sites: np.ndarray) -> np.ndarray:
    """Vectorized stream keys for an (n, d) integer array of lattice sites."""
    base = np.uint64(stream_key(seed, tag))
    per_axis = sites.astype(np.int64, copy=False).astype(np.uint64)
    acc = per_axis[:, 0] * AXIS_CONSTANTS[0]
    for i in range(1, sites.shape[1]):
        acc = acc + per_axis[:, i] * AXIS_CONSTANTS[i]
    return mix64(base ^ acc)


def site_key_scalar(seed: int, tag: int, site) -> int:
    h = stream_key(seed, tag)
    acc = 0
    for i, c in enumerate(site):
        acc = (acc + (int(c) & MASK64) * int(AXIS_CONSTANTS[i])) & MASK64
    return mix64_scalar(h ^ acc)


def uniform_scalar(key: int, counter: int) -> float:
    """Draw number `counter` of the stream `key`, uniform on [0, 1)."""
    z = mix64_scalar((key + GOLDEN * counter) & MASK64)
    return (z >> 11) * _INV53


def uniforms(keys: np.ndarray, counter: int) -> np.ndarray:
    """Vectorized draw `counter` from each stream in `keys`."""
    z = mix64(keys + np.uint64((GOLDEN * counter) & MASK64))
    return (z >> _SHIFT11).astype(np.float64) * _INV53


def walker_keys(seed: int, walker_ids: np.ndarray) -> np.ndarray:
    base = stream_key(seed, TAG_WALK)
    return mix64(np.uint64(base) ^ walker_ids.astype(np.uint64))


def spawn_seed(seed: int, *labels: int) -> int:
    """Derive a child 64-bit seed, e.g. per task or per environment copy."""
    return stream_key(seed, TAG_TASK, *labels)
