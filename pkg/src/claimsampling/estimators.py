"""IBNR reserve estimators: chain ladder, IPW, AIPW, micro-level and credibility.

Every estimator returns a :class:`ReserveEstimate`. Inputs are plain
arrays over the reported claims; in count mode pass ``Y = 1`` and
``Y_hat = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import InclusionProbabilities, as_probabilities, fmt
from .errors import InvalidArgumentError
from .triangle import Triangle, development_factors, development_to_ultimate

ESTIMATORS = ("CL", "IPW", "AIPW", "AIPW-CL", "ML", "ML-wBP", "ML-WL", "CRED")

CSV_HEADER = (
    "valuation_date", "estimator", "point", "model_term", "augmentation_term",
    "interval_lo", "interval_hi",
)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    level: float
    method: str = "geometric-bootstrap"


@dataclass(frozen=True)
class ReserveEstimate:
    """Point estimate of the IBNR reserve plus the pieces it is built from.

    For AIPW-type estimators ``point == model_term + augmentation_term``;
    for IPW ``point == ipw_term``.
    """

    label: str
    point: float
    model_term: Optional[float] = None
    augmentation_term: Optional[float] = None
    ipw_term: Optional[float] = None
    weights: dict = field(default_factory=dict)
    interval: Optional[Interval] = None
    measure: str = "amount"
    extra: dict = field(default_factory=dict)

    def with_interval(self, interval: Interval) -> "ReserveEstimate":
        return replace(self, interval=interval)

    def to_row(self, valuation_date) -> list:
        iv = self.interval
        return [
            fmt(valuation_date), self.label, fmt(self.point),
            fmt(self.model_term), fmt(self.augmentation_term),
            fmt(iv.lo if iv else None), fmt(iv.hi if iv else None),
        ]

    def to_dict(self) -> dict:
        d = {
            "label": self.label,
            "point": self.point,
            "model_term": self.model_term,
            "augmentation_term": self.augmentation_term,
            "ipw_term": self.ipw_term,
            "measure": self.measure,
            "weights": dict(self.weights),
        }
        if self.interval is not None:
            d["interval"] = vars(self.interval).copy()
        if self.extra:
            d["extra"] = dict(self.extra)
        return d


def _vec(a, name, n=None) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(-1)
    if n is not None and len(a) != n:
        raise InvalidArgumentError(f"{name} has length {len(a)}, expected {n}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return a


# -- chain ladder ------------------------------------------------------------------


def chain_ladder(triangle: Triangle, measure: str = "amount"):
    """Classical chain ladder.

    Returns
    -------
    estimate : ReserveEstimate
        Reserve ``sum_k C_k (f_k - 1)`` over latest diagonal values ``C_k``.
    implied_pi : ndarray
        Per-cohort implied inclusion probability ``1 / f_k``.
    """
    f = development_factors(triangle)
    ult = development_to_ultimate(triangle, f)
    latest = triangle.latest_diagonal()
    reserve = float(np.sum(latest * (ult - 1.0)))
    pi = 1.0 / ult
    est = ReserveEstimate(
        "CL", reserve, measure=measure,
        weights={"min_pi": float(pi.min()), "max_pi": float(pi.max()), "n_clamped": 0},
        extra={"factors": f.tolist(), "to_ultimate": ult.tolist()},
    )
    return est, pi


# -- sampling estimators -----------------------------------------------------------


def ipw_reserve(y, pis, label: str = "IPW", measure: str = "amount") -> ReserveEstimate:
    """Odds-weighted sum ``sum (1 - pi) / pi * Y`` over reported claims."""
    pis = as_probabilities(pis)
    y = _vec(y, "Y", len(pis))
    total = float(np.dot(pis.odds, y))
    return ReserveEstimate(label, total, ipw_term=total, weights=pis.summary(), measure=measure)


def aipw_reserve(y, y_hat, model_total: float, pis, label: str = "AIPW",
                 measure: str = "amount") -> ReserveEstimate:
    """Model IBNR prediction plus the odds-weighted residual correction.

    ``model_total`` is the model's predicted IBNR total; the augmentation
    term ``sum odds * (Y - Y_hat)`` estimates minus that prediction's bias.
    """
    pis = as_probabilities(pis)
    n = len(pis)
    y = _vec(y, "Y", n)
    y_hat = _vec(y_hat, "Y_hat", n)
    model_total = float(model_total)
    odds = pis.odds
    aug = float(np.dot(odds, y - y_hat))
    return ReserveEstimate(
        label, model_total + aug, model_term=model_total, augmentation_term=aug,
        ipw_term=float(np.dot(odds, y)), weights=pis.summary(), measure=measure,
    )


def aipw_cl_reserve(y, y_hat, model_total: float, cohort_pi, measure: str = "amount") -> ReserveEstimate:
    """AIPW with the chain-ladder implied probability of each claim's cohort."""
    if not isinstance(cohort_pi, InclusionProbabilities):
        cohort_pi = InclusionProbabilities.from_raw(cohort_pi, source="chain-ladder-implied")
    return aipw_reserve(y, y_hat, model_total, cohort_pi, label="AIPW-CL", measure=measure)


def ml_reserve(lambdas, predictions, label: str = "ML", measure: str = "amount") -> ReserveEstimate:
    """Micro-level reserve ``sum_j lambda_j * Y_hat_j`` over policies.

    ML-wBP and ML-WL are this same sum with the calibrated or weighted
    severity model's predictions.
    """
    lam = _vec(lambdas, "lambda")
    pred = _vec(predictions, "predictions", len(lam))
    if np.any(lam < 0):
        raise InvalidArgumentError("expected IBNR counts must be >= 0")
    total = float(np.dot(lam, pred))
    return ReserveEstimate(label, total, model_term=total, measure=measure)


def credibility_reserve(cl_ultimate, expert_ultimate, z: float, pi_cl,
                        measure: str = "amount") -> ReserveEstimate:
    """Linear credibility mix of the chain-ladder and an expert ultimate.

    Inputs may be per cohort (arrays) or aggregate scalars. The ultimate is
    evaluated twice, as ``Z * CL + (1 - Z) * E`` and in its AIPW
    arrangement ``E + (L_R - E * pi) * Z / pi`` with ``L_R = CL * pi`` the
    reported amount; both are returned in ``extra``. The point is the
    IBNR reserve, i.e. the convex-form ultimate minus ``L_R``.
    """
    if not 0.0 <= z <= 1.0:
        raise InvalidArgumentError("credibility weight Z must lie in [0, 1]")
    cl = np.atleast_1d(np.asarray(cl_ultimate, dtype=float))
    ex = np.atleast_1d(np.asarray(expert_ultimate, dtype=float))
    pi = np.atleast_1d(np.asarray(pi_cl, dtype=float))
    if not (cl.shape == ex.shape == pi.shape):
        raise InvalidArgumentError("cl_ultimate, expert_ultimate and pi_cl must align")
    if np.any(~((pi > 0) & (pi <= 1))):
        raise InvalidArgumentError("implied probabilities must lie in (0, 1]")
    reported = cl * pi
    convex = z * cl + (1.0 - z) * ex
    # written with Z / pi rather than 1 / (pi / Z) so that Z = 0 is defined
    rearranged = ex + (reported - ex * pi) * (z / pi)
    ult = float(convex.sum())
    lr = float(reported.sum())
    return ReserveEstimate(
        "CRED", ult - lr, model_term=float((ex - reported).sum()),
        augmentation_term=float((convex - ex).sum()), measure=measure,
        extra={
            "ultimate": ult,
            "ultimate_aipw_form": float(rearranged.sum()),
            "reported": lr,
            "z": float(z),
        },
    )
