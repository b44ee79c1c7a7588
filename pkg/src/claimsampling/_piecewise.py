"""Piecewise-constant hazard arithmetic shared by the simulator and the delay model.

Bins are ``[e_0, e_1), [e_1, e_2), ..., [e_{K-1}, inf)`` with ``e_0 = 0``.
"""

import numpy as np


def check_edges(edges) -> np.ndarray:
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size == 0:
        raise ValueError("bin grid must be a non-empty 1-d sequence")
    if edges[0] != 0.0:
        raise ValueError("bin grid must start at 0")
    if np.any(np.diff(edges) <= 0):
        raise ValueError("bin grid must be strictly increasing")
    return edges


def overlap(edges: np.ndarray, t) -> np.ndarray:
    """Time spent in each bin up to ``t``; shape ``t.shape + (K,)``."""
    t = np.asarray(t, dtype=float)[..., None]
    lo = edges
    hi = np.append(edges[1:], np.inf)
    return np.clip(np.minimum(t, hi) - lo, 0.0, None)


def cumulative_baseline(edges: np.ndarray, rates: np.ndarray, t) -> np.ndarray:
    """Integral of the step baseline from 0 to ``t``."""
    t = np.asarray(t, dtype=float)
    knots = np.concatenate([[0.0], np.cumsum(rates[:-1] * np.diff(edges))])
    k = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, len(edges) - 1)
    with np.errstate(invalid="ignore"):
        out = knots[k] + rates[k] * (t - edges[k])
    return np.where(np.isposinf(t), np.inf, out)


def invert_cumulative_baseline(edges: np.ndarray, rates: np.ndarray, target) -> np.ndarray:
    """Smallest ``t`` with cumulative baseline equal to ``target``."""
    target = np.asarray(target, dtype=float)
    knots = np.concatenate([[0.0], np.cumsum(rates[:-1] * np.diff(edges))])
    k = np.clip(np.searchsorted(knots, target, side="right") - 1, 0, len(edges) - 1)
    return edges[k] + (target - knots[k]) / rates[k]
