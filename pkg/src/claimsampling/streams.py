"""Counter-based random streams.

Every variate is a pure function of ``(key, stream id, counter)``: the key
comes from the run seed plus a path of integers (replicate, purpose, ...),
the stream id names the entity drawing (a policy, a claim) and the counter
numbers the draws inside that stream. Results therefore do not depend on
evaluation order, chunking or thread count, and whole arrays of streams
are evaluated in one vectorized pass.

The mixing function is the SplitMix64 finalizer applied twice with
distinct odd increments for the stream id and the counter.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_COUNTER_INC = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix64(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def _mix_int(x: int) -> int:
    z = np.array([x & _MASK], dtype=np.uint64)
    with np.errstate(over="ignore"):
        return int(_mix64(z + _GOLDEN)[0])


def stream_key(seed: int, *path: int) -> int:
    """Derive a 64-bit key from a seed and a path of non-negative integers."""
    key = _mix_int(int(seed))
    for p in path:
        key = _mix_int(key ^ _mix_int(int(p) + 0x632BE59BD9B4E019))
    return key


def random_bits(key: int, ids, counter) -> np.ndarray:
    """Raw 64-bit outputs for each ``(id, counter)`` pair (broadcast)."""
    ids = np.asarray(ids, dtype=np.uint64)
    counter = np.asarray(counter, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(key) + ids * _GOLDEN
        z = _mix64(z)
        z = z + (counter + np.uint64(1)) * _COUNTER_INC
        z = _mix64(z)
    return z


def uniforms(key: int, ids, counter=0) -> np.ndarray:
    """Uniform variates on the open interval (0, 1), 53-bit resolution."""
    bits = random_bits(key, ids, counter) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)
