"""Right-truncated piecewise-exponential reporting-delay model.

The hazard of the reporting delay is

    lambda(u | x) = exp(alpha[bin(u)] + x' beta)

with a step baseline on a fixed bin grid. Only delays with
``U <= tau - T`` are observed, so each reported claim contributes
``f(u) / F(tau - T)`` to the likelihood.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _piecewise as pw
from .core import (
    DEFAULT_CLAMP_FLOOR,
    InclusionProbabilities,
    Portfolio,
    ValuationContext,
)
from .errors import ConvergenceError, InvalidArgumentError, UndefinedCohortError

_MIN_BOUND = 1e-12


@dataclass(frozen=True)
class DelayDesign:
    """Reported-claim data for the delay fit.

    ``bounds`` is the truncation point ``tau - T_i``; it may be ``inf``
    for untruncated observations.
    """

    covariates: np.ndarray
    delays: np.ndarray
    bounds: np.ndarray
    covariate_names: tuple = ()

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        u = np.asarray(self.delays, dtype=float)
        b = np.asarray(self.bounds, dtype=float)
        if x.ndim != 2 or len(x) != len(u) or len(u) != len(b):
            raise InvalidArgumentError("covariates, delays and bounds must align")
        if np.any(u < 0) or np.any(b < u):
            raise InvalidArgumentError("truncation bound must be >= the observed delay")
        if self.covariate_names and len(self.covariate_names) != x.shape[1]:
            raise InvalidArgumentError("covariate_names length must match covariate columns")
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "delays", u)
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    def __len__(self):
        return len(self.delays)


def delay_covariates(portfolio: Portfolio, idx, log_severity=True, log_severity_value=None):
    """Design rows for the hazard: claim covariates plus optional log-severity.

    ``log_severity_value`` replaces the claims' own log-severity (used when
    evaluating policies whose claims are not yet observed).
    """
    idx = np.asarray(idx, dtype=np.int64)
    x = portfolio.claim_covariates[idx]
    names = list(portfolio.covariate_schema)
    if log_severity:
        ly = np.log(portfolio.severity[idx]) if log_severity_value is None else np.full(len(idx), log_severity_value)
        x = np.column_stack([x, ly])
        names.append("log_severity")
    return x, tuple(names)


def build_delay_design(
    portfolio: Portfolio, context: ValuationContext, log_severity: bool = True
) -> DelayDesign:
    idx = context.reported_idx
    x, names = delay_covariates(portfolio, idx, log_severity)
    return DelayDesign(
        covariates=x,
        delays=portfolio.report_delay[idx],
        bounds=context.tau - portfolio.accident_time[idx],
        covariate_names=names,
    )


@dataclass(frozen=True)
class HazardModel:
    bin_edges: np.ndarray
    log_baseline: np.ndarray
    beta: np.ndarray
    covariate_names: tuple = ()
    converged: bool = True
    iterations: int = 0
    grad_norm: float = 0.0
    loglik: float = float("nan")
    n_obs: int = 0
    ridge_fallback: bool = False
    null_loglik: float = float("nan")

    def __post_init__(self):
        edges = pw.check_edges(self.bin_edges)
        lb = np.asarray(self.log_baseline, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        if lb.shape != edges.shape:
            raise InvalidArgumentError("need one log-baseline value per bin")
        if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(beta))):
            raise InvalidArgumentError("hazard coefficients must be finite")
        for name, v in (("bin_edges", edges), ("log_baseline", lb), ("beta", beta)):
            v = v.copy()
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    @property
    def n_covariates(self) -> int:
        return len(self.beta)

    def _rows(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, self.n_covariates) if self.n_covariates else np.zeros((1, 0))
        if x.shape[-1] != self.n_covariates:
            raise InvalidArgumentError(
                f"expected {self.n_covariates} delay covariates, got {x.shape[-1]}"
            )
        return x

    def cumulative_hazard(self, x, elapsed) -> np.ndarray:
        x = self._rows(x)
        h0 = pw.cumulative_baseline(self.bin_edges, np.exp(self.log_baseline), elapsed)
        return h0 * np.exp(x @ self.beta)

    def hazard(self, x, u) -> np.ndarray:
        x = self._rows(x)
        k = np.searchsorted(self.bin_edges, np.asarray(u, float), side="right") - 1
        return np.exp(self.log_baseline[k] + x @ self.beta)

    def inclusion_probability(self, x, elapsed) -> np.ndarray:
        """Vectorized P(U <= elapsed | x)."""
        elapsed = np.asarray(elapsed, dtype=float)
        if np.any(elapsed < 0):
            raise InvalidArgumentError("elapsed time must be >= 0")
        return -np.expm1(-self.cumulative_hazard(x, elapsed))

    def to_dict(self) -> dict:
        return {
            "kind": "piecewise-exponential-hazard",
            "bin_edges": self.bin_edges.tolist(),
            "log_baseline": self.log_baseline.tolist(),
            "beta": self.beta.tolist(),
            "covariate_names": list(self.covariate_names),
            "diagnostics": {
                "converged": self.converged,
                "iterations": self.iterations,
                "grad_norm": self.grad_norm,
                "loglik": self.loglik,
                "null_loglik": self.null_loglik,
                "n_obs": self.n_obs,
                "ridge_fallback": self.ridge_fallback,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HazardModel":
        diag = d.get("diagnostics", {})
        return cls(
            bin_edges=np.asarray(d["bin_edges"], float),
            log_baseline=np.asarray(d["log_baseline"], float),
            beta=np.asarray(d["beta"], float),
            covariate_names=tuple(d.get("covariate_names", ())),
            **{k: diag[k] for k in ("converged", "iterations", "grad_norm", "loglik",
                                     "null_loglik", "n_obs", "ridge_fallback") if k in diag},
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def inclusion_probability(model: HazardModel, x, elapsed: float) -> float:
    """P(U <= elapsed) for a single covariate row."""
    if elapsed < 0:
        raise InvalidArgumentError("elapsed time must be >= 0")
    return float(model.inclusion_probability(np.reshape(x, (1, -1)) if np.size(x) else np.zeros((1, 0)), [elapsed])[0])


def quantile_edges(delays, n_bins: int = 8) -> np.ndarray:
    """Bin grid at the empirical quantiles of the observed delays.

    Duplicate quantiles are merged, so fewer than ``n_bins`` bins can come
    back for heavily tied data.
    """
    delays = np.asarray(delays, dtype=float)
    if delays.size == 0:
        raise InvalidArgumentError("no delays to place bins on")
    inner = np.quantile(delays, np.arange(1, n_bins) / n_bins)
    edges = np.unique(np.concatenate([[0.0], inner[inner > 0]]))
    return edges


# -- likelihood ------------------------------------------------------------------------


def truncated_loglik(params, design: DelayDesign, edges, hessian: bool = True):
    """Right-truncated piecewise-exponential log-likelihood.

    ``params`` is ``(log_baseline[0..K-1], beta)``. Returns
    ``(loglik, gradient, hessian)``, the last being ``None`` when not
    requested. Observations with a zero truncation bound carry no
    information and must be dropped beforehand.
    """
    edges = np.asarray(edges, dtype=float)
    K = len(edges)
    params = np.asarray(params, dtype=float)
    alpha, beta = params[:K], params[K:]
    x = design.covariates
    u, b = design.delays, design.bounds
    eta = x @ beta
    ea = np.exp(alpha)
    scale = np.exp(eta)

    k_u = np.searchsorted(edges, u, side="right") - 1
    o_u = pw.overlap(edges, u)  # (n, K)
    c_u = o_u * ea[None, :] * scale[:, None]
    h_u = c_u.sum(axis=1)

    fin = np.isfinite(b)
    o_b = pw.overlap(edges, np.where(fin, b, 0.0))
    c_b = np.where(fin[:, None], o_b * ea[None, :] * scale[:, None], 0.0)
    h_b = c_b.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_f_b = np.where(fin, np.log(-np.expm1(-h_b)), 0.0)
        g1 = np.where(fin, 1.0 / np.expm1(h_b), 0.0)  # d/dH log(1 - exp(-H))
    g1 = np.where(np.isfinite(g1), g1, 0.0)
    g2 = -g1 * (1.0 + g1)

    ll = float(alpha[k_u].sum() + eta.sum() - h_u.sum() - log_f_b.sum())

    onehot = np.zeros_like(o_u)
    onehot[np.arange(len(u)), k_u] = 1.0
    grad_a = (onehot - c_u - g1[:, None] * c_b).sum(axis=0)
    r_beta = 1.0 - h_u - g1 * h_b
    grad_b = x.T @ r_beta
    grad = np.concatenate([grad_a, grad_b])
    if not hessian:
        return ll, grad, None

    p = len(params)
    H = np.zeros((p, p))
    # alpha-alpha
    H[:K, :K] = -np.diag(c_u.sum(0) + (g1[:, None] * c_b).sum(0)) - (c_b * g2[:, None]).T @ c_b
    # alpha-beta
    w_ab = -c_u - (g2 * h_b)[:, None] * c_b - g1[:, None] * c_b
    H[:K, K:] = w_ab.T @ x
    H[K:, :K] = H[:K, K:].T
    # beta-beta
    w_bb = -h_u - g2 * h_b**2 - g1 * h_b
    H[K:, K:] = (x * w_bb[:, None]).T @ x
    return ll, grad, H


def _newton(fun, x0, max_iter, tol, ridge):
    """Maximize ``fun`` (returns ll, grad, hess) by damped Newton steps."""
    x = np.asarray(x0, dtype=float).copy()
    ll, g, H = fun(x)
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) < tol:
            it -= 1
            break
        A = -H + ridge * np.eye(len(x))
        lam = 0.0
        while True:
            try:
                L = np.linalg.cholesky(A + lam * np.eye(len(x)))
                break
            except np.linalg.LinAlgError:
                lam = max(1e-6, 10 * lam)
        step = np.linalg.solve(L.T, np.linalg.solve(L, g))
        t = 1.0
        while True:
            cand = x + t * step
            ll_c, g_c, H_c = fun(cand)
            if np.isfinite(ll_c) and ll_c >= ll + 1e-4 * t * (g @ step):
                break
            t *= 0.5
            if t < 1e-12:
                ll_c, g_c, H_c = ll, g, H
                cand = x
                break
        if cand is x:
            break
        x, ll, g, H = cand, ll_c, g_c, H_c
    return x, ll, g, it


def fit_hazard(
    design: DelayDesign,
    bin_edges: Optional[Sequence[float]] = None,
    n_bins: int = 8,
    ridge: float = 1e-8,
    max_iter: int = 200,
    tol: float = 1e-8,
    penalty: float = 1e-2,
) -> HazardModel:
    """Maximum-likelihood fit of the truncated piecewise-exponential model.

    The likelihood is scaled by ``1/n`` so ``tol`` applies to the mean
    per-claim score. Bins without any observed event make the likelihood
    unbounded; a quadratic ``penalty`` pulling every log-baseline towards
    the pooled log-rate is then added and ``ridge_fallback`` is set.

    Raises
    ------
    ConvergenceError
        If the score norm is still above ``tol`` after ``max_iter`` steps.
    """
    keep = design.bounds > _MIN_BOUND
    if not np.all(keep):
        design = DelayDesign(
            design.covariates[keep], design.delays[keep], design.bounds[keep], design.covariate_names
        )
    n = len(design)
    if n == 0:
        raise InvalidArgumentError("no reported claims with positive truncation bound")
    edges = quantile_edges(design.delays, n_bins) if bin_edges is None else pw.check_edges(bin_edges)
    K = len(edges)
    k_u = np.searchsorted(edges, design.delays, side="right") - 1
    events = np.bincount(k_u, minlength=K)
    use_penalty = bool(np.any(events == 0))

    pooled = np.log(n / max(design.delays.sum(), 1e-12))
    d = design.covariates.shape[1]
    x_mean = design.covariates.mean(axis=0) if n else np.zeros(d)

    def objective(theta, pen=use_penalty):
        ll, g, H = truncated_loglik(theta, design, edges)
        if pen:
            dev = theta[:K] - pooled
            ll -= 0.5 * penalty * n * (dev @ dev)
            g = g.copy()
            g[:K] -= penalty * n * dev
            H = H.copy()
            H[:K, :K] -= penalty * n * np.eye(K)
        return ll / n, g / n, H / n

    def null_objective(theta):
        ll, g, H = objective(np.concatenate([theta, np.zeros(d)]))
        return ll, g[:K], H[:K, :K]

    # baseline-only fit first; it seeds the full fit and gives the null likelihood
    a0, null_ll, _, _ = _newton(null_objective, np.full(K, pooled - x_mean @ np.zeros(d)), max_iter, tol, ridge)
    theta, ll, g, it = _newton(objective, np.concatenate([a0, np.zeros(d)]), max_iter, tol, ridge)
    gnorm = float(np.max(np.abs(g)))
    raw_ll = truncated_loglik(theta, design, edges, hessian=False)[0]
    null_raw = truncated_loglik(np.concatenate([a0, np.zeros(d)]), design, edges, hessian=False)[0]
    diag = dict(iterations=it, grad_norm=gnorm, loglik=raw_ll, n_obs=n)
    if gnorm >= tol:
        raise ConvergenceError(
            f"hazard fit did not reach score tolerance {tol:g} (|g|={gnorm:.3g})", diag
        )
    return HazardModel(
        bin_edges=edges,
        log_baseline=theta[:K],
        beta=theta[K:],
        covariate_names=design.covariate_names,
        converged=True,
        iterations=it,
        grad_norm=gnorm,
        loglik=float(raw_ll),
        null_loglik=float(null_raw),
        n_obs=n,
        ridge_fallback=use_penalty,
    )


# -- probabilities -----------------------------------------------------------------


def inclusion_probabilities(
    model: HazardModel, x, elapsed, clamp_floor: float = DEFAULT_CLAMP_FLOOR
) -> InclusionProbabilities:
    return InclusionProbabilities.from_raw(
        model.inclusion_probability(x, elapsed), source="model", clamp_floor=clamp_floor
    )


def _gauss_legendre(n):
    return np.polynomial.legendre.leggauss(n)


def average_inclusion_probabilities(model: HazardModel, x, tau: float, start, end, n_nodes: int = 64,
                                    eta_shift=None, shift_weights=None):
    """Mean of ``pi(tau - t)`` over accident times ``t`` uniform on each window.

    The window is cut at ``tau``. The integrand has kinks where the
    elapsed time crosses a bin edge, so the range is split there and
    ``n_nodes`` Gauss-Legendre nodes are used on every smooth piece.

    With ``eta_shift`` of shape ``(m, G)`` the result is the mixture
    ``sum_g shift_weights[g] * p(eta + eta_shift[:, g])``, which averages
    the probability over a discretized distribution of a covariate term.
    """
    x = model._rows(x)
    start = np.asarray(start, dtype=float).reshape(-1)
    end = np.asarray(end, dtype=float).reshape(-1)
    if len(start) != len(x) or len(end) != len(x):
        raise InvalidArgumentError("one window per covariate row is required")
    hi_t = np.minimum(end, tau)
    if np.any(hi_t <= start):
        raise InvalidArgumentError("empty integration range: window starts at or after tau")
    # elapsed range [a, b]
    a = tau - hi_t
    b = tau - start
    edges = model.bin_edges
    hi_edges = np.append(edges[1:], np.inf)
    lo = np.maximum(a[:, None], edges[None, :])
    hi = np.minimum(b[:, None], hi_edges[None, :])
    width = np.clip(hi - lo, 0.0, None)  # (m, K)
    nodes, weights = _gauss_legendre(n_nodes)
    e = lo[:, :, None] + (nodes[None, None, :] + 1.0) * 0.5 * width[:, :, None]
    h0 = pw.cumulative_baseline(edges, np.exp(model.log_baseline), e)
    wq = weights[None, None, :] * (0.5 * width / (b - a)[:, None])[:, :, None]
    eta = x @ model.beta
    if eta_shift is None:
        return (-np.expm1(-h0 * np.exp(eta)[:, None, None]) * wq).sum(axis=(1, 2))
    eta_shift = np.asarray(eta_shift, dtype=float)
    shift_weights = np.asarray(shift_weights, dtype=float)
    out = np.zeros(len(x))
    for g, wg in enumerate(shift_weights):
        scale = np.exp(eta + eta_shift[:, g])
        out += wg * (-np.expm1(-h0 * scale[:, None, None]) * wq).sum(axis=(1, 2))
    return out


def average_inclusion_probability(model: HazardModel, x, tau: float, window, n_nodes: int = 64) -> float:
    """Scalar form of :func:`average_inclusion_probabilities` for one policy."""
    start, end = window
    row = np.reshape(np.asarray(x, dtype=float), (1, model.n_covariates))
    return float(average_inclusion_probabilities(model, row, tau, [start], [end], n_nodes)[0])


def empirical_cohort_probabilities(
    portfolio: Portfolio,
    context: ValuationContext,
    width: float,
    origin: float = 0.0,
    measure: str = "amount",
    clamp_floor: float = DEFAULT_CLAMP_FLOOR,
) -> InclusionProbabilities:
    """Chain-ladder implied inclusion probability for every reported claim.

    Claims are grouped into accident cohorts of length ``width``; every
    claim gets ``1 / f`` of its cohort, ``f`` being the cohort's
    development-to-ultimate factor.
    """
    from .triangle import Triangle, development_to_ultimate

    idx = context.reported_idx
    tri = Triangle.from_claims(
        portfolio.accident_time[idx],
        portfolio.report_time[idx],
        portfolio.severity[idx] if measure == "amount" else np.ones(len(idx)),
        tau=context.tau,
        width=width,
        origin=origin,
    )
    latest = tri.latest_diagonal()
    empty = [k for k in range(tri.n_periods) if not latest[k] > 0]
    if empty:
        raise UndefinedCohortError(f"cohorts without reported claims: {empty}", empty)
    f = development_to_ultimate(tri)
    cohort = tri.cohort_of(portfolio.accident_time[idx])
    return InclusionProbabilities.from_raw(
        1.0 / f[cohort], source="chain-ladder-implied", clamp_floor=clamp_floor
    )
