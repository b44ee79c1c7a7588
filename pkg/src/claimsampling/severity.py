"""Lognormal severity regression: plain, odds-weighted and balance-calibrated.

``log Y ~ Normal(nu, sigma^2)`` with ``nu = beta_0 + x' beta``. Three modes:

* ``plain``: maximum likelihood on the reported claims;
* ``weighted``: likelihood weighted by the odds ``(1 - pi) / pi`` so the
  fit targets the unreported claims;
* ``plain+wbp``: plain fit whose predictions are rescaled by a scalar
  ``b`` so that odds-weighted predictions and observations balance.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .core import as_probabilities
from .errors import CalibrationWarning, InvalidArgumentError, SingularDesignError

MODES = ("plain", "weighted", "plain+wbp")


@dataclass(frozen=True)
class SeverityModel:
    beta: np.ndarray
    sigma: float
    mode: str = "plain"
    wbp_b: float = 1.0
    covariate_names: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).reshape(-1)
        if beta.size == 0 or not np.all(np.isfinite(beta)):
            raise InvalidArgumentError("beta must be a non-empty finite vector (intercept first)")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        if self.mode not in MODES:
            raise InvalidArgumentError(f"unknown severity mode {self.mode!r}")
        if not (self.sigma >= 0 and np.isfinite(self.sigma)):
            raise InvalidArgumentError("sigma must be finite and >= 0")
        if not (self.wbp_b > 0 and np.isfinite(self.wbp_b)):
            raise InvalidArgumentError("wbp_b must be finite and > 0")
        if self.mode == "weighted" and self.wbp_b != 1.0:
            raise InvalidArgumentError("a weighted-likelihood model carries no balance factor")

    @property
    def n_covariates(self) -> int:
        return len(self.beta) - 1

    def location(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1) if self.n_covariates else np.zeros((1, 0))
        if x.shape[1] != self.n_covariates:
            raise InvalidArgumentError(
                f"severity model expects {self.n_covariates} covariates, got {x.shape[1]}"
            )
        return self.beta[0] + x @ self.beta[1:]

    def base_mean(self, x) -> np.ndarray:
        """Lognormal mean ``exp(nu + sigma^2 / 2)`` without the balance factor."""
        return np.exp(self.location(x) + 0.5 * self.sigma**2)

    def to_dict(self) -> dict:
        return {
            "kind": "lognormal-severity",
            "mode": self.mode,
            "beta": self.beta.tolist(),
            "sigma": self.sigma,
            "wbp_b": self.wbp_b,
            "covariate_names": list(self.covariate_names),
            "diagnostics": dict(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SeverityModel":
        return cls(
            beta=np.asarray(d["beta"], float),
            sigma=float(d["sigma"]),
            mode=d.get("mode", "plain"),
            wbp_b=float(d.get("wbp_b", 1.0)),
            covariate_names=tuple(d.get("covariate_names", ())),
            diagnostics=dict(d.get("diagnostics", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def predict_mean(model: SeverityModel, x) -> np.ndarray:
    """Expected severity ``b * exp(nu + sigma^2 / 2)``; one value per row of ``x``."""
    return model.wbp_b * model.base_mean(x)


def _design(x, n):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(n, -1) if x.size else np.zeros((n, 0))
    if len(x) != n:
        raise InvalidArgumentError("covariate rows must match the number of severities")
    return np.column_stack([np.ones(n), x])


def fit_lognormal(
    y,
    x,
    weights=None,
    covariate_names=(),
    ridge_fallback: bool = True,
    ridge: float = 1e-8,
) -> SeverityModel:
    """Weighted least squares on ``log Y``.

    ``sigma^2`` is the weighted residual sum of squares over the total
    weight (likelihood convention). Without weights this is the plain MLE;
    with weights the returned model has ``mode="weighted"``.

    Parameters
    ----------
    y : array_like
        Positive severities of the reported claims.
    x : array_like, shape (n, d)
        Covariates, without the intercept column.
    weights : array_like, optional
        Nonnegative per-claim weights, typically capped odds ratios.
    ridge_fallback : bool
        On a rank-deficient design, add a small ridge and warn instead of
        raising :class:`SingularDesignError`.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if np.any(~(y > 0)):
        raise InvalidArgumentError("severities must be > 0")
    n = len(y)
    X = _design(x, n)
    p = X.shape[1]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    if len(w) != n or np.any(~(w >= 0)) or not np.all(np.isfinite(w)):
        raise InvalidArgumentError("weights must be finite, >= 0 and one per claim")
    if not w.sum() > 0:
        raise InvalidArgumentError("total weight is zero")
    if int(np.count_nonzero(w)) < p + 2:
        raise InvalidArgumentError(f"need at least {p + 2} positively weighted claims")

    ly = np.log(y)
    sw = np.sqrt(w)
    A = X * sw[:, None]
    rhs = ly * sw
    used_ridge = False
    if np.linalg.matrix_rank(A) < p:
        if not ridge_fallback:
            raise SingularDesignError("severity design matrix is rank deficient")
        warnings.warn("rank-deficient severity design; ridge fallback applied", RuntimeWarning, stacklevel=2)
        G = A.T @ A
        lam = ridge * max(np.trace(G) / p, 1.0)
        beta = np.linalg.solve(G + lam * np.eye(p), A.T @ rhs)
        used_ridge = True
    else:
        beta = np.linalg.lstsq(A, rhs, rcond=None)[0]
    resid = ly - X @ beta
    sigma = float(np.sqrt(np.sum(w * resid**2) / w.sum()))
    return SeverityModel(
        beta=beta,
        sigma=sigma,
        mode="plain" if weights is None else "weighted",
        covariate_names=covariate_names,
        diagnostics={"n_obs": n, "total_weight": float(w.sum()), "ridge_fallback": used_ridge},
    )


def weighted_nll(params, y, x, weights=None):
    """Weighted Gaussian negative log-likelihood of ``log Y`` and its gradient.

    ``params`` is ``(beta, log sigma)``. Constants are dropped. The
    minimizer coincides with :func:`fit_lognormal`.
    """
    params = np.asarray(params, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    X = _design(x, len(y))
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    beta, log_s = params[:-1], params[-1]
    s2 = np.exp(2 * log_s)
    r = np.log(y) - X @ beta
    value = float(np.sum(w * (log_s + 0.5 * r**2 / s2)))
    g_beta = -X.T @ (w * r) / s2
    g_s = float(np.sum(w * (1.0 - r**2 / s2)))
    return value, np.append(g_beta, g_s)


def cap_weights(weights, quantile: float = 0.995):
    """Cap weights at their ``quantile``-th empirical quantile.

    Returns ``(capped, cap, n_capped)``.
    """
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        return w.copy(), float("nan"), 0
    cap = float(np.quantile(w, quantile))
    over = w > cap
    return np.minimum(w, cap), cap, int(over.sum())


def fit_weighted(y, x, pis, cap_quantile: Optional[float] = 0.995, covariate_names=(),
                 **kwargs) -> SeverityModel:
    """Odds-weighted fit, with the odds capped at ``cap_quantile``.

    ``cap_quantile=None`` disables the cap.
    """
    pis = as_probabilities(pis)
    odds = pis.odds
    if cap_quantile is None:
        w, cap, n_cap = odds, float("nan"), 0
    else:
        w, cap, n_cap = cap_weights(odds, cap_quantile)
    model = fit_lognormal(y, x, weights=w, covariate_names=covariate_names, **kwargs)
    diag = dict(model.diagnostics, weight_cap=cap, n_capped=n_cap)
    return replace(model, diagnostics=diag)


def calibrate_wbp(model: SeverityModel, y, x, pis, weights: str = "odds") -> SeverityModel:
    """Rescale predictions so the weighted balance property holds.

    Sets ``b = sum w Y / sum w Y_hat`` where ``Y_hat`` are the uncalibrated
    predictions. ``weights="odds"`` uses ``(1 - pi)/pi`` (balance on the
    unreported claims); ``"inverse"`` uses ``1/pi`` (whole population) and
    ``"unit"`` the reported claims only. When every weight is zero there
    is nothing to balance: ``b = 1`` and a :class:`CalibrationWarning` is
    issued.
    """
    if model.mode == "weighted":
        raise InvalidArgumentError("balance calibration applies to plain fits only")
    pis = as_probabilities(pis)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) != len(pis):
        raise InvalidArgumentError("one probability per severity is required")
    if weights == "odds":
        w = pis.odds
    elif weights == "inverse":
        w = 1.0 / pis.values
    elif weights == "unit":
        w = np.ones(len(y))
    else:
        raise InvalidArgumentError(f"unknown balance weights {weights!r}")
    y_hat = model.base_mean(x)
    den = float(np.dot(w, y_hat))
    if not den > 0:
        warnings.warn("no unreported mass to balance; balance factor left at 1", CalibrationWarning,
                      stacklevel=2)
        b = 1.0
    else:
        b = float(np.dot(w, y)) / den
    diag = dict(model.diagnostics, wbp_weights=weights)
    return replace(model, mode="plain+wbp", wbp_b=b, diagnostics=diag)
