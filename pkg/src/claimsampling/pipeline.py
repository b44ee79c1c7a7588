"""Fit the delay, count and severity models at a valuation date and evaluate
the reserve estimators on top of them."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import delay as dm
from .core import DEFAULT_CLAMP_FLOOR, InclusionProbabilities, Portfolio, ValuationContext, partition
from .errors import InvalidArgumentError, ReservingError
from .estimators import (
    ESTIMATORS,
    aipw_cl_reserve,
    aipw_reserve,
    chain_ladder,
    credibility_reserve,
    ipw_reserve,
    ml_reserve,
)
from .frequency import CountDesign, IbnrCountLaw, ZinbModel, expected_ibnr_count, fit_zinb, ibnr_conditional
from .severity import SeverityModel, calibrate_wbp, fit_lognormal, fit_weighted, predict_mean
from .synthetic import bootstrap_reserve
from .triangle import Triangle

_HERMITE_NODES = 16

SEVERITY_PLUGINS = ("median", "weighted-median", "integrate")


@dataclass(frozen=True)
class FitOptions:
    """Model and estimator settings shared by ``fit``, ``reserve`` and ``backtest``.

    ``severity_plugin`` picks the log-severity value used in the hazard when
    computing a policy's average inclusion probability: the median over
    reported claims (``"median"``) or the ``1/pi``-weighted median, which
    estimates the median over all incurred claims (``"weighted-median"``).
    ``"integrate"`` instead averages the probability over a lognormal
    severity law fitted with ``1/pi`` weights, i.e. over the estimated
    severity distribution of all incurred claims of the policy.
    """

    n_bins: int = 8
    bin_edges: Optional[tuple] = None
    delay_log_severity: bool = True
    severity_plugin: str = "median"
    count_family: str = "zinb"
    weight_cap: Optional[float] = 0.995
    clamp_floor: float = DEFAULT_CLAMP_FLOOR
    cl_width: float = 1.0
    cl_origin: float = 0.0
    credibility_z: float = 0.5
    quadrature_nodes: int = 64
    max_iter: int = 200
    tol: float = 1e-8

    def __post_init__(self):
        if self.severity_plugin not in SEVERITY_PLUGINS:
            raise InvalidArgumentError(f"severity_plugin must be one of {SEVERITY_PLUGINS}")
        if not 0 <= self.credibility_z <= 1:
            raise InvalidArgumentError("credibility_z must lie in [0, 1]")
        if not self.cl_width > 0:
            raise InvalidArgumentError("cl_width must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "FitOptions":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgumentError(f"unknown model options: {sorted(unknown)}")
        if d.get("bin_edges") is not None:
            d["bin_edges"] = tuple(d["bin_edges"])
        return cls(**d)


@dataclass(frozen=True)
class ParameterModels:
    """Fitted parameters only; reusable at later valuation dates."""

    hazard: dm.HazardModel
    counts: Optional[ZinbModel]
    severity: SeverityModel
    severity_weighted: Optional[SeverityModel]
    log_severity_plugin: float
    tau: float
    population_severity: Optional[SeverityModel] = None

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "log_severity_plugin": self.log_severity_plugin,
            "population_severity": None if self.population_severity is None
            else self.population_severity.to_dict(),
            "hazard": self.hazard.to_dict(),
            "counts": None if self.counts is None else self.counts.to_dict(),
            "severity": self.severity.to_dict(),
            "severity_weighted": None if self.severity_weighted is None else self.severity_weighted.to_dict(),
        }


@dataclass(frozen=True)
class Fitted:
    """Everything the estimators need at one valuation date."""

    context: ValuationContext
    params: ParameterModels
    pis: InclusionProbabilities
    active: np.ndarray
    p_policy: np.ndarray
    exposure_earned: np.ndarray
    law: Optional[IbnrCountLaw]
    lambdas: np.ndarray
    severity_wbp: Optional[SeverityModel]
    warnings: tuple = ()


def _weighted_median(values, weights):
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    c = np.cumsum(w)
    return float(v[np.searchsorted(c, 0.5 * c[-1])])


def fit_parameters(portfolio: Portfolio, context: ValuationContext, options: FitOptions) -> ParameterModels:
    idx = context.reported_idx
    if len(idx) == 0:
        raise InvalidArgumentError(f"no claims reported by tau={context.tau:g}")
    design = dm.build_delay_design(portfolio, context, options.delay_log_severity)
    hazard = dm.fit_hazard(
        design, bin_edges=options.bin_edges, n_bins=options.n_bins,
        max_iter=options.max_iter, tol=options.tol,
    )
    y = portfolio.severity[idx]
    x = portfolio.claim_covariates[idx]
    log_y = np.log(y)
    pis = _claim_pis(portfolio, context, hazard, options)
    names = portfolio.covariate_schema
    population = None
    if options.severity_plugin == "median":
        plugin = float(np.median(log_y))
    else:
        plugin = _weighted_median(log_y, 1.0 / pis.values)
        if options.severity_plugin == "integrate":
            population = fit_lognormal(y, x, weights=1.0 / pis.values, covariate_names=names)
    sev = fit_lognormal(y, x, covariate_names=names)
    sev_w = fit_weighted(y, x, pis, cap_quantile=options.weight_cap, covariate_names=names) \
        if pis.odds.sum() > 0 else None
    counts = _fit_counts(portfolio, context, hazard, (plugin, population), options)
    return ParameterModels(hazard, counts, sev, sev_w, plugin, context.tau, population)


def _claim_pis(portfolio, context, hazard, options) -> InclusionProbabilities:
    idx = context.reported_idx
    x, _ = dm.delay_covariates(portfolio, idx, options.delay_log_severity)
    elapsed = context.tau - portfolio.accident_time[idx]
    return dm.inclusion_probabilities(hazard, x, elapsed, options.clamp_floor)


def _policy_terms(portfolio, tau, hazard, plugin, options):
    """Average inclusion probability and earned exposure of policies started by tau.

    ``plugin`` is ``(log_severity, population_model)``; with a population
    model the probability is averaged over its lognormal law by
    Gauss-Hermite quadrature, otherwise the fixed log-severity is used.
    """
    log_sev, population = plugin
    active = np.flatnonzero(portfolio.contract_start < tau)
    x = portfolio.policy_covariates[active]
    start, end = portfolio.contract_start[active], portfolio.contract_end[active]
    if not options.delay_log_severity:
        p = dm.average_inclusion_probabilities(hazard, x, tau, start, end, options.quadrature_nodes)
    elif population is None:
        xs = np.column_stack([x, np.full(len(active), log_sev)])
        p = dm.average_inclusion_probabilities(hazard, xs, tau, start, end, options.quadrature_nodes)
    else:
        z, w = np.polynomial.hermite_e.hermegauss(_HERMITE_NODES)
        w = w / w.sum()
        log_y = population.location(x)[:, None] + population.sigma * z[None, :]
        xs = np.column_stack([x, np.zeros(len(active))])
        p = dm.average_inclusion_probabilities(hazard, xs, tau, start, end, options.quadrature_nodes,
                                               eta_shift=hazard.beta[-1] * log_y, shift_weights=w)
    earned = portfolio.exposure[active] * portfolio.earned_fraction(tau)[active]
    return active, np.clip(p, 1e-12, 1.0), earned


def _reported_counts(portfolio, context, n_policies):
    return np.bincount(portfolio.claim_policy[context.reported_idx], minlength=n_policies)


def _fit_counts(portfolio, context, hazard, plugin, options):
    active, p, earned = _policy_terms(portfolio, context.tau, hazard, plugin, options)
    n_rep = _reported_counts(portfolio, context, portfolio.n_policies)[active]
    design = CountDesign(n_rep, earned * p, portfolio.policy_covariates[active], portfolio.exposure[active])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fit_zinb(design, family=options.count_family, max_iter=options.max_iter,
                        tol=options.tol, covariate_names=portfolio.covariate_schema)


def fit_models(
    portfolio: Portfolio,
    tau: float,
    options: Optional[FitOptions] = None,
    params: Optional[ParameterModels] = None,
) -> Fitted:
    """Fit (or reuse) all models at valuation ``tau``.

    With ``params`` the coefficients are kept and only the quantities that
    depend on ``tau`` (probabilities, IBNR laws, balance factor) are
    recomputed.
    """
    options = options or FitOptions()
    context = partition(portfolio, tau)
    if params is None:
        params = fit_parameters(portfolio, context, options)
    hazard = params.hazard
    idx = context.reported_idx
    pis = _claim_pis(portfolio, context, hazard, options)
    active, p, earned = _policy_terms(portfolio, tau, hazard,
                                      (params.log_severity_plugin, params.population_severity), options)
    law, lam = None, np.zeros(len(active))
    if params.counts is not None:
        m = params.counts
        x = portfolio.policy_covariates[active]
        n_rep = _reported_counts(portfolio, context, portfolio.n_policies)[active]
        law = ibnr_conditional(
            m.zero_prob(x, portfolio.exposure[active]), m.theta(x), m.dispersion,
            earned, p, n_rep, policy_ids=portfolio.policy_ids[active],
        )
        lam = expected_ibnr_count(law)
    caught = []
    sev_wbp = None
    if len(idx):
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            sev_wbp = calibrate_wbp(params.severity, portfolio.severity[idx],
                                    portfolio.claim_covariates[idx], pis)
        caught = [str(w.message) for w in rec]
    return Fitted(context, params, pis, active, p, earned, law, lam, sev_wbp, tuple(caught))


# -- estimators ------------------------------------------------------------------


def _cl_pieces(portfolio, context, options):
    idx = context.reported_idx
    tri = Triangle.from_claims(
        portfolio.accident_time[idx], portfolio.report_time[idx], portfolio.severity[idx],
        tau=context.tau, width=options.cl_width, origin=options.cl_origin,
    )
    est, pi_cohort = chain_ladder(tri)
    return tri, est, pi_cohort


def evaluate_estimators(
    portfolio: Portfolio,
    fitted: Fitted,
    estimators: Sequence[str] = ESTIMATORS,
    options: Optional[FitOptions] = None,
    bootstrap: Optional[dict] = None,
) -> dict:
    """Evaluate the requested estimators; failures map to their error message.

    Returns
    -------
    dict
        ``label -> ReserveEstimate`` for successes and ``label -> str`` with
        the reason for estimators that could not be evaluated.
    """
    options = options or FitOptions()
    unknown = [e for e in estimators if e not in ESTIMATORS]
    if unknown:
        raise InvalidArgumentError(f"unknown estimators: {unknown}")
    ctx = fitted.context
    idx = ctx.reported_idx
    y = portfolio.severity[idx]
    x_claims = portfolio.claim_covariates[idx]
    x_pol = portfolio.policy_covariates[fitted.active]
    params = fitted.params
    out: dict = {}

    def ml_with(model, label):
        return ml_reserve(fitted.lambdas, predict_mean(model, x_pol), label=label)

    cache: dict = {}

    def cl():
        if "cl" not in cache:
            cache["cl"] = _cl_pieces(portfolio, ctx, options)
        return cache["cl"]

    def ml():
        if "ml" not in cache:
            cache["ml"] = ml_with(params.severity, "ML")
        return cache["ml"]

    for name in estimators:
        try:
            if name == "IPW":
                est = ipw_reserve(y, fitted.pis)
                if bootstrap:
                    iv, mean, _ = bootstrap_reserve(y, fitted.pis, **bootstrap)
                    est = replace(est.with_interval(iv), extra={"bootstrap_mean": mean})
            elif name == "CL":
                est = cl()[1]
            elif name == "ML":
                est = ml()
            elif name == "ML-wBP":
                est = ml_with(fitted.severity_wbp, "ML-wBP")
            elif name == "ML-WL":
                if params.severity_weighted is None:
                    raise InvalidArgumentError("no unreported mass to weight the severity fit")
                est = ml_with(params.severity_weighted, "ML-WL")
            elif name == "AIPW":
                est = aipw_reserve(y, predict_mean(params.severity, x_claims), ml().point, fitted.pis)
            elif name == "AIPW-CL":
                tri, _, pi_cohort = cl()
                cohort = tri.cohort_of(portfolio.accident_time[idx])
                pis = InclusionProbabilities.from_raw(pi_cohort[cohort], "chain-ladder-implied",
                                                      options.clamp_floor)
                est = aipw_cl_reserve(y, predict_mean(params.severity, x_claims), ml().point, pis)
            elif name == "CRED":
                _, cl_est, _ = cl()
                reported = float(y.sum())
                cl_ult = reported + cl_est.point
                expert_ult = reported + ml().point
                est = credibility_reserve(cl_ult, expert_ult, options.credibility_z,
                                          reported / cl_ult if cl_ult > 0 else 1.0)
            out[name] = est
        except ReservingError as exc:
            out[name] = f"{type(exc).__name__}: {exc}"
    return out
