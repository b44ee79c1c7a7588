"""Pseudo-populations of unreported claims built by replicating reported ones.

A reported claim with inclusion probability ``pi`` stands for
``(1 - pi) / pi`` unreported claims on average. The fixed pseudo-population
uses exactly that weight; the stochastic one draws
``Z ~ Geom(pi)`` (failures before the first success), whose mean is the
same odds.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .core import as_probabilities, fmt
from .errors import InvalidArgumentError, UndefinedDistributionError
from .estimators import Interval
from .streams import stream_key, uniforms


@dataclass(frozen=True)
class PseudoPopulation:
    source: np.ndarray
    weights: np.ndarray
    mode: str = "fixed"
    seed: Optional[int] = None

    def __post_init__(self):
        src = np.array(self.source, dtype=np.int64).reshape(-1)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if len(src) != len(w):
            raise InvalidArgumentError("one weight per source claim is required")
        if self.mode not in ("fixed", "geometric"):
            raise InvalidArgumentError(f"unknown pseudo-population mode {self.mode!r}")
        if np.any(~(w >= 0)) or not np.all(np.isfinite(w)):
            raise InvalidArgumentError("replication weights must be finite and >= 0")
        if self.mode == "geometric" and np.any(w != np.floor(w)):
            raise InvalidArgumentError("geometric replication weights must be integers")
        for name, v in (("source", src), ("weights", w)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    def __len__(self):
        return len(self.source)

    def total(self, values) -> float:
        """Weighted total ``sum w_i v_i`` of a per-source-claim quantity."""
        values = np.asarray(values, dtype=float)
        return float(np.dot(self.weights, values[self.source]))

    def write_csv(self, path, claim_ids) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["source_claim_id", "weight"])
            for s, wt in zip(self.source, self.weights):
                w.writerow([claim_ids[s], fmt(wt)])


def fixed_pseudo_population(pis) -> PseudoPopulation:
    pis = as_probabilities(pis)
    return PseudoPopulation(np.arange(len(pis)), pis.odds, mode="fixed")


def geometric_draws(pis, seed: int, replicate: int = 0) -> np.ndarray:
    """Failures before first success, one per claim, by inversion.

    The variate of claim ``i`` depends only on ``(seed, replicate, i)``.
    """
    pi = as_probabilities(pis).values
    u = uniforms(stream_key(seed, 7, replicate), np.arange(len(pi)))
    out = np.zeros(len(pi))
    part = pi < 1.0
    # P(Z >= k) = (1 - pi)^k, so Z = floor(log U / log(1 - pi))
    out[part] = np.floor(np.log(u[part]) / np.log1p(-pi[part]))
    return out


def geometric_pseudo_population(pis, seed: int, replicate: int = 0) -> PseudoPopulation:
    z = geometric_draws(pis, seed, replicate)
    return PseudoPopulation(np.arange(len(z)), z, mode="geometric", seed=seed)


@dataclass(frozen=True)
class WeightedECDF:
    """Right-continuous step function ``F(y) = sum w 1{Y <= y} / sum w``."""

    points: np.ndarray
    cumulative: np.ndarray

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        k = np.searchsorted(self.points, y, side="right")
        out = np.where(k > 0, self.cumulative[np.maximum(k - 1, 0)], 0.0)
        return float(out) if out.ndim == 0 else out


def weighted_ecdf(severities, weights) -> WeightedECDF:
    """Self-normalized weighted ECDF.

    ``weights`` may be an array or a :class:`PseudoPopulation` whose
    source indices refer to ``severities``.
    """
    y = np.asarray(severities, dtype=float).reshape(-1)
    if isinstance(weights, PseudoPopulation):
        w = np.zeros(len(y))
        np.add.at(w, weights.source, weights.weights)
    else:
        w = np.asarray(weights, dtype=float).reshape(-1)
    if len(w) != len(y):
        raise InvalidArgumentError("one weight per severity is required")
    if np.any(~(w >= 0)):
        raise InvalidArgumentError("weights must be >= 0")
    total = w.sum()
    if not total > 0:
        raise UndefinedDistributionError("total weight is zero; no distribution to estimate")
    order = np.argsort(y, kind="stable")
    ys, ws = y[order], w[order]
    pts, first = np.unique(ys, return_index=True)
    cum = np.cumsum(ws) / total
    last = np.append(first[1:], len(ys)) - 1
    c = cum[last]
    c[-1] = 1.0
    return WeightedECDF(pts, c)


def ks_distance(ecdf: WeightedECDF, cdf: Callable) -> float:
    """Sup distance between a step function and a continuous CDF."""
    f_true = np.asarray(cdf(ecdf.points), dtype=float)
    before = np.concatenate([[0.0], ecdf.cumulative[:-1]])
    return float(max(np.max(np.abs(ecdf.cumulative - f_true)), np.max(np.abs(before - f_true))))


def bootstrap_reserve(
    y,
    pis,
    n_boot: int = 1000,
    level: float = 0.9,
    seed: int = 0,
    statistic: Optional[Callable] = None,
    threads: int = 1,
    keep_totals: bool = False,
):
    """Quantile interval from geometric pseudo-population replicates.

    Each replicate draws ``Z_i ~ Geom(pi_i)`` and evaluates
    ``statistic(z)``; the default is the IPW target ``sum Z_i Y_i``.

    Returns
    -------
    interval : Interval
    mean : float
        Mean of the replicate totals.
    totals : ndarray or None
        The replicate totals when ``keep_totals`` is set.
    """
    if n_boot < 100:
        raise InvalidArgumentError("at least 100 bootstrap replicates are required")
    if not 0 < level < 1:
        raise InvalidArgumentError("level must lie in (0, 1)")
    pis = as_probabilities(pis)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) != len(pis):
        raise InvalidArgumentError("one probability per severity is required")
    stat = statistic or (lambda z: float(np.dot(z, y)))

    def one(b):
        return stat(geometric_draws(pis, seed, b))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            totals = np.fromiter(ex.map(one, range(n_boot)), float, n_boot)
    else:
        totals = np.fromiter((one(b) for b in range(n_boot)), float, n_boot)
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(totals, [a, 1.0 - a])
    iv = Interval(float(lo), float(hi), level, "geometric-bootstrap")
    return iv, float(totals.mean()), (totals if keep_totals else None)
