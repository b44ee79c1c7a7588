"""Synthetic portfolios with known ground truth.

Each policy draws a claim count (Poisson or ZINB), accident times are
uniform over the contract window, log-severities are normal around a
linear predictor, and reporting delays follow a piecewise-exponential
hazard whose linear predictor includes ``gamma * log(Y)``. A positive
``gamma`` makes large claims report faster, so reported claims are
heavier than the ones still outstanding at any valuation date.

All randomness comes from :mod:`claimsampling.streams`: policy attributes
use one key per seed, claims one key per ``(seed, replicate)``, and every
policy/claim owns its own stream. Policies therefore stay fixed across
replicates, which is what the expectation oracles in this module condition
on.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit, ndtri

from . import _piecewise as pw
from .core import Claim, Portfolio
from .errors import InvalidArgumentError
from .streams import stream_key, uniforms

_CLAIM_SHIFT = 20  # claim stream id = (policy index << 20) | claim number


@dataclass(frozen=True)
class FrequencySpec:
    """Claim-count law per policy over its whole contract.

    ``theta_coef`` is ``(intercept, *slopes)`` of ``log theta``; the
    expected count of the NB part is ``exposure * theta``. ``zero_coef``
    is ``(intercept, *slopes)`` of ``logit q``, optionally followed by an
    exposure coefficient.
    """

    mode: str = "poisson"
    theta_coef: tuple = (-2.0,)
    zero_coef: tuple = (-20.0,)
    dispersion: float = 1e8


@dataclass(frozen=True)
class SeveritySpec:
    beta: tuple = (7.0,)
    sigma: float = 1.0


@dataclass(frozen=True)
class StepProfile:
    """Reporting-delay CDF given directly as a step function.

    ``values[k]`` is P(U <= e) for ``edges[k] <= e < edges[k+1]``. Mass
    above ``values[-1]`` is never reported. Used to build configurations
    where the inclusion probability depends on elapsed time only.
    """

    edges: tuple = (0.0,)
    values: tuple = (0.5,)

    def cdf(self, elapsed):
        edges = np.asarray(self.edges, dtype=float)
        values = np.asarray(self.values, dtype=float)
        e = np.asarray(elapsed, dtype=float)
        k = np.searchsorted(edges, e, side="right") - 1
        return np.where(k >= 0, values[np.clip(k, 0, None)], 0.0)


@dataclass(frozen=True)
class DelaySpec:
    bin_edges: tuple = (0.0,)
    rates: tuple = (1.0,)
    beta: tuple = ()
    gamma: float = 0.0
    profile: Optional[StepProfile] = None


@dataclass(frozen=True)
class SimConfig:
    n_policies: int = 1000
    horizon: float = 36.0
    covariate_low: tuple = ()
    covariate_high: tuple = ()
    covariate_names: Optional[tuple] = None
    exposure_range: tuple = (1.0, 1.0)
    contract_length: Optional[float] = None
    frequency: FrequencySpec = field(default_factory=FrequencySpec)
    severity: SeveritySpec = field(default_factory=SeveritySpec)
    delay: DelaySpec = field(default_factory=DelaySpec)
    rng_seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def dim(self) -> int:
        return len(self.covariate_low)

    @property
    def schema(self) -> tuple:
        if self.covariate_names is not None:
            return tuple(self.covariate_names)
        return tuple(f"x{k + 1}" for k in range(self.dim))

    @property
    def window(self) -> float:
        return self.horizon if self.contract_length is None else self.contract_length

    def validate(self):
        d = self.dim
        if int(self.n_policies) < 1:
            raise InvalidArgumentError("n_policies must be >= 1")
        if not self.horizon > 0:
            raise InvalidArgumentError("horizon must be > 0")
        if len(self.covariate_high) != d or np.any(
            np.asarray(self.covariate_high, float) < np.asarray(self.covariate_low, float)
        ):
            raise InvalidArgumentError("covariate ranges must pair low <= high")
        if self.covariate_names is not None and len(self.covariate_names) != d:
            raise InvalidArgumentError("covariate_names length must match the covariate ranges")
        lo, hi = self.exposure_range
        if not 0 < lo <= hi:
            raise InvalidArgumentError("exposure_range must satisfy 0 < low <= high")
        if not 0 < self.window <= self.horizon:
            raise InvalidArgumentError("contract_length must lie in (0, horizon]")
        f = self.frequency
        if f.mode not in ("poisson", "zinb"):
            raise InvalidArgumentError(f"unknown frequency mode {f.mode!r}")
        if len(f.theta_coef) != d + 1:
            raise InvalidArgumentError("theta_coef needs an intercept plus one slope per covariate")
        if len(f.zero_coef) not in (d + 1, d + 2):
            raise InvalidArgumentError("zero_coef needs intercept, slopes and optional exposure term")
        if not f.dispersion > 0:
            raise InvalidArgumentError("dispersion must be > 0")
        s = self.severity
        if len(s.beta) != d + 1:
            raise InvalidArgumentError("severity beta needs an intercept plus one slope per covariate")
        if not s.sigma > 0:
            raise InvalidArgumentError("severity sigma must be > 0")
        dl = self.delay
        try:
            pw.check_edges(dl.bin_edges)
        except ValueError as exc:
            raise InvalidArgumentError(str(exc)) from None
        if len(dl.rates) != len(dl.bin_edges) or np.any(np.asarray(dl.rates, float) <= 0):
            raise InvalidArgumentError("delay needs one positive rate per bin")
        if len(dl.beta) != d:
            raise InvalidArgumentError("delay beta needs one coefficient per covariate")
        if dl.profile is not None:
            try:
                pw.check_edges(dl.profile.edges)
            except ValueError as exc:
                raise InvalidArgumentError(str(exc)) from None
            v = np.asarray(dl.profile.values, float)
            if len(v) != len(dl.profile.edges) or np.any(np.diff(v) < 0):
                raise InvalidArgumentError("profile values must be nondecreasing, one per edge")
            if v[0] <= 0 or v[-1] > 1:
                raise InvalidArgumentError("profile values must lie in (0, 1]")

    @property
    def homogeneous_marks(self) -> bool:
        """True when severity and inclusion depend on accident time only."""
        return (
            not np.any(np.asarray(self.severity.beta[1:], float))
            and not np.any(np.asarray(self.delay.beta, float))
            and self.delay.gamma == 0.0
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        return json.loads(json.dumps(out))

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        data = dict(data)
        freq = FrequencySpec(**_tuples(data.pop("frequency", {})))
        sev = SeveritySpec(**_tuples(data.pop("severity", {})))
        delay = dict(data.pop("delay", {}))
        profile = delay.pop("profile", None)
        if profile is not None:
            profile = StepProfile(**_tuples(profile))
        delay = DelaySpec(profile=profile, **_tuples(delay))
        return cls(frequency=freq, severity=sev, delay=delay, **_tuples(data))


def _tuples(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


# -- linear predictors ------------------------------------------------------------


def _theta(config, x):
    c = np.asarray(config.frequency.theta_coef, float)
    return np.exp(c[0] + x @ c[1:])


def _zero_prob(config, x, exposure):
    f = config.frequency
    if f.mode == "poisson":
        return np.zeros(len(x))
    c = np.asarray(f.zero_coef, float)
    d = config.dim
    eta = c[0] + x @ c[1 : d + 1]
    if len(c) == d + 2:
        eta = eta + c[d + 1] * exposure
    return expit(eta)


def _location(config, x):
    b = np.asarray(config.severity.beta, float)
    return b[0] + x @ b[1:]


def _delay_eta(config, x, log_y):
    return x @ np.asarray(config.delay.beta, float) + config.delay.gamma * log_y


def inclusion_probability_array(config: SimConfig, x, log_y, elapsed) -> np.ndarray:
    """True P(U <= elapsed) for claims with covariates ``x`` and log-severity ``log_y``."""
    elapsed = np.asarray(elapsed, dtype=float)
    if np.any(elapsed < 0):
        raise InvalidArgumentError("elapsed time must be >= 0")
    if config.delay.profile is not None:
        return config.delay.profile.cdf(elapsed)
    edges = np.asarray(config.delay.bin_edges, float)
    rates = np.asarray(config.delay.rates, float)
    x = np.asarray(x, dtype=float).reshape(-1, config.dim) if config.dim else np.zeros((np.size(log_y), 0))
    h0 = pw.cumulative_baseline(edges, rates, elapsed)
    return -np.expm1(-h0 * np.exp(_delay_eta(config, x, np.asarray(log_y, float))))


def true_inclusion_probability(config: SimConfig, claim: Claim, tau: float) -> float:
    """Exact inclusion probability of ``claim`` at valuation time ``tau``."""
    if tau < claim.accident_time:
        raise InvalidArgumentError("valuation time precedes the accident")
    x = np.asarray(claim.covariates, float).reshape(1, config.dim)
    p = inclusion_probability_array(
        config, x, np.array([np.log(claim.severity)]), np.array([tau - claim.accident_time])
    )
    return float(p[0])


# -- sampling -------------------------------------------------------------------------


def _count_ppf(u, mean, r=None, max_iter=100_000):
    """Inverse CDF of Poisson(mean) or NB(mean, r) by pmf recursion."""
    mean = np.asarray(mean, dtype=float)
    k = np.zeros(u.shape, dtype=np.int64)
    if r is None:
        p = np.exp(-mean)
    else:
        p = np.exp(-r * np.log1p(mean / r))
        ratio = mean / (mean + r)
    cdf = p.copy()
    active = np.flatnonzero(u > cdf)
    it = 0
    while active.size and it < max_iter:
        it += 1
        k[active] += 1
        kk = k[active]
        if r is None:
            p[active] = p[active] * mean[active] / kk
        else:
            p[active] = p[active] * (kk - 1 + r) / kk * ratio[active]
        cdf[active] += p[active]
        # stop once the pmf underflows past the mode; u sits in the rounding gap
        keep = (u[active] > cdf[active]) & ((p[active] > 0) | (kk < mean[active]))
        active = active[keep]
    return k


def simulate_policies(config: SimConfig) -> dict:
    """Policy attributes; depend on ``rng_seed`` only."""
    m, d = int(config.n_policies), config.dim
    key = stream_key(config.rng_seed, 0)
    ids = np.arange(m, dtype=np.uint64)
    lo = np.asarray(config.covariate_low, float)
    hi = np.asarray(config.covariate_high, float)
    x = np.empty((m, d))
    for k in range(d):
        x[:, k] = lo[k] + (hi[k] - lo[k]) * uniforms(key, ids, k)
    elo, ehi = config.exposure_range
    exposure = elo + (ehi - elo) * uniforms(key, ids, d)
    length = config.window
    start = (config.horizon - length) * uniforms(key, ids, d + 1)
    return {"x": x, "exposure": exposure, "start": start, "end": start + length}


def simulate_claims(config: SimConfig, policies: dict, replicate: int = 0) -> dict:
    """Claim arrays for one replicate: ``policy``, ``t``, ``u``, ``log_y``."""
    key = stream_key(config.rng_seed, 1, replicate)
    x, exposure = policies["x"], policies["exposure"]
    m = len(exposure)
    ids = np.arange(m, dtype=np.uint64)
    mean = exposure * _theta(config, x)
    f = config.frequency
    if f.mode == "poisson":
        counts = _count_ppf(uniforms(key, ids, 1), mean)
    else:
        counts = _count_ppf(uniforms(key, ids, 1), mean, r=f.dispersion)
        counts[uniforms(key, ids, 0) < _zero_prob(config, x, exposure)] = 0
    if counts.size and counts.max() >= (1 << _CLAIM_SHIFT):
        raise InvalidArgumentError("claim count per policy exceeds the stream layout")
    policy = np.repeat(np.arange(m), counts)
    first = np.cumsum(counts) - counts
    number = np.arange(len(policy)) - np.repeat(first, counts)
    cid = (policy.astype(np.uint64) << np.uint64(_CLAIM_SHIFT)) | number.astype(np.uint64)
    start, end = policies["start"][policy], policies["end"][policy]
    t = start + (end - start) * uniforms(key, cid, 0)
    xc = x[policy]
    log_y = _location(config, xc) + config.severity.sigma * ndtri(uniforms(key, cid, 1))
    u3 = uniforms(key, cid, 2)
    dl = config.delay
    if dl.profile is not None:
        values = np.asarray(dl.profile.values, float)
        edges = np.asarray(dl.profile.edges, float)
        k = np.searchsorted(values, u3, side="left")
        delay = np.where(k < len(values), edges[np.clip(k, 0, len(edges) - 1)], np.inf)
    else:
        target = -np.log(u3) * np.exp(-_delay_eta(config, xc, log_y))
        delay = pw.invert_cumulative_baseline(
            np.asarray(dl.bin_edges, float), np.asarray(dl.rates, float), target
        )
    return {"policy": policy, "number": number, "t": t, "u": delay, "log_y": log_y}


@dataclass
class GroundTruth:
    """Full claim population of a simulated portfolio.

    ``portfolio`` carries every claim, reported or not at any date.
    """

    config: SimConfig
    portfolio: Portfolio
    log_severity: np.ndarray

    def inclusion_probabilities(self, tau: float, idx=None) -> np.ndarray:
        """True pi_i(tau) for the claims at ``idx`` (all claims by default)."""
        p = self.portfolio
        idx = np.arange(p.n_claims) if idx is None else np.asarray(idx)
        elapsed = tau - p.accident_time[idx]
        if np.any(elapsed < 0):
            raise InvalidArgumentError("valuation time precedes some accidents")
        return inclusion_probability_array(
            self.config, p.claim_covariates[idx], self.log_severity[idx], elapsed
        )

    def _ibnr_mask(self, tau):
        p = self.portfolio
        return (p.accident_time <= tau) & (p.report_time > tau)

    def ibnr_liability(self, tau: float) -> float:
        return float(self.portfolio.severity[self._ibnr_mask(tau)].sum())

    def ibnr_count(self, tau: float) -> int:
        return int(self._ibnr_mask(tau).sum())

    def reported_liability(self, tau: float) -> float:
        return float(self.portfolio.severity[self.portfolio.report_time <= tau].sum())

    def total_liability(self, tau: float) -> float:
        return float(self.portfolio.severity[self.portfolio.accident_time <= tau].sum())

    def to_json(self, grid=()) -> dict:
        return {
            "config": self.config.to_dict(),
            "inclusion_model": {
                "bin_edges": list(self.config.delay.bin_edges),
                "rates": list(self.config.delay.rates),
                "beta": list(self.config.delay.beta),
                "gamma": self.config.delay.gamma,
            },
            "reserves": [
                {
                    "valuation_date": float(tau),
                    "ibnr_liability": self.ibnr_liability(tau),
                    "ibnr_count": self.ibnr_count(tau),
                    "reported_liability": self.reported_liability(tau),
                }
                for tau in grid
            ],
        }

    def write_json(self, path, grid=()) -> None:
        Path(path).write_text(json.dumps(self.to_json(grid), indent=2, sort_keys=True) + "\n")


def build_portfolio(config: SimConfig, policies: dict, claims: dict) -> tuple:
    """Wrap simulated arrays into a :class:`Portfolio` and :class:`GroundTruth`."""
    m = len(policies["exposure"])
    width = max(1, len(str(m - 1)))
    policy_ids = np.array([f"P{j:0{width}d}" for j in range(m)], dtype=object)
    pol = claims["policy"]
    claim_ids = np.array(
        [f"{policy_ids[j]}-{n}" for j, n in zip(pol.tolist(), claims["number"].tolist())],
        dtype=object,
    )
    portfolio = Portfolio(
        policy_ids=policy_ids,
        exposure=policies["exposure"],
        contract_start=policies["start"],
        contract_end=policies["end"],
        policy_covariates=policies["x"],
        claim_ids=claim_ids,
        claim_policy=pol,
        accident_time=claims["t"],
        report_delay=claims["u"],
        severity=np.exp(claims["log_y"]),
        claim_covariates=policies["x"][pol],
        covariate_schema=config.schema,
        validate=False,
    )
    return portfolio, GroundTruth(config, portfolio, claims["log_y"])


def simulate(config: SimConfig, replicate: int = 0) -> tuple:
    """Simulate one portfolio; returns ``(Portfolio, GroundTruth)``.

    Deterministic in ``(config.rng_seed, replicate)``; policies depend on
    the seed only.
    """
    config.validate()
    policies = simulate_policies(config)
    claims = simulate_claims(config, policies, replicate)
    return build_portfolio(config, policies, claims)


# -- expectation oracles ---------------------------------------------------------------


def _hermite(n):
    z, w = np.polynomial.hermite_e.hermegauss(n)
    return z, w / np.sqrt(2 * np.pi)


def expected_claim_counts(config: SimConfig, policies: dict) -> np.ndarray:
    """Expected claim count per policy over its whole contract."""
    x, exposure = policies["x"], policies["exposure"]
    return (1 - _zero_prob(config, x, exposure)) * exposure * _theta(config, x)


def _elapsed_pieces(config, policies, tau):
    """Elapsed-time intervals per policy split at the hazard's bin edges.

    Returns ``(lo, width, bin)`` arrays of shape (m, K) covering
    ``tau - min(end, tau) <= e <= tau - start``.
    """
    if config.delay.profile is not None:
        edges = np.asarray(config.delay.profile.edges, float)
    else:
        edges = np.asarray(config.delay.bin_edges, float)
    a = tau - np.minimum(policies["end"], tau)
    b = np.maximum(tau - policies["start"], a)
    hi_edges = np.append(edges[1:], np.inf)
    lo = np.maximum(a[:, None], edges[None, :])
    hi = np.minimum(b[:, None], hi_edges[None, :])
    width = np.clip(hi - lo, 0.0, None)
    return lo, width, edges


def expected_ibnr(config: SimConfig, policies: dict, tau: float, n_nodes: int = 48) -> dict:
    """Expected IBNR count and liability per policy at ``tau``.

    The accident-time integral is done exactly bin by bin; the severity
    integral uses Gauss-Hermite quadrature on the log scale.
    """
    counts = expected_claim_counts(config, policies)
    length = policies["end"] - policies["start"]
    lo, width, edges = _elapsed_pieces(config, policies, tau)
    nu = _location(config, policies["x"])
    sigma = config.severity.sigma
    mean_y = np.exp(nu + sigma**2 / 2)
    dl = config.delay
    if dl.profile is not None:
        miss = 1.0 - np.asarray(dl.profile.values, float)
        time_int = (width * miss[None, :]).sum(axis=1)
        cnt = counts / length * time_int
        return {"count": cnt, "liability": cnt * mean_y, "earned_count": counts * width.sum(1) / length}
    rates = np.asarray(dl.rates, float)
    knots = np.concatenate([[0.0], np.cumsum(rates[:-1] * np.diff(edges))])
    z, w = _hermite(n_nodes)
    log_y = nu[:, None] + sigma * z[None, :]  # (m, n)
    mult = np.exp(_delay_eta_grid(config, policies["x"], log_y))  # (m, n)
    h_lo = knots[None, :] + rates[None, :] * (lo - edges[None, :])  # (m, K)
    h_lo = np.where(width > 0, h_lo, 0.0)
    # integral over a bin of exp(-mult * (h_lo + rate * s)) ds, s in [0, width]
    a = mult[:, None, :] * h_lo[:, :, None]
    bw = mult[:, None, :] * (rates[None, :, None] * width[:, :, None])
    with np.errstate(invalid="ignore", divide="ignore"):
        piece = np.exp(-a) * (-np.expm1(-bw)) / (mult[:, None, :] * rates[None, :, None])
    piece = np.where(width[:, :, None] > 0, piece, 0.0)
    surv_int = piece.sum(axis=1)  # (m, n): time-integral of P(U > elapsed)
    rate = counts / length
    cnt = rate * (surv_int @ w)
    liab = rate * ((surv_int * np.exp(log_y)) @ w)
    return {"count": cnt, "liability": liab, "earned_count": counts * width.sum(1) / length}


def _delay_eta_grid(config, x, log_y):
    beta = np.asarray(config.delay.beta, float)
    return (x @ beta)[:, None] + config.delay.gamma * log_y


def conditional_severity_mean(config: SimConfig, x, elapsed, reported: bool = True, n_nodes: int = 64):
    """E[Y | claim reported (or not) after ``elapsed``, covariates ``x``]."""
    x = np.asarray(x, float).reshape(-1, config.dim)
    elapsed = np.asarray(elapsed, float)
    nu = _location(config, x)
    sigma = config.severity.sigma
    if config.delay.profile is not None:
        return np.exp(nu + sigma**2 / 2)
    z, w = _hermite(n_nodes)
    log_y = nu[:, None] + sigma * z[None, :]
    edges = np.asarray(config.delay.bin_edges, float)
    rates = np.asarray(config.delay.rates, float)
    h0 = pw.cumulative_baseline(edges, rates, elapsed)
    pi = -np.expm1(-h0[:, None] * np.exp(_delay_eta_grid(config, x, log_y)))
    weight = pi if reported else 1.0 - pi
    return ((weight * np.exp(log_y)) @ w) / (weight @ w)


def severity_cdf_oracle(
    config: SimConfig, policies: dict, tau: float, y, reported: bool = False, n_z: int = 4001
) -> np.ndarray:
    """CDF of severity among claims incurred by ``tau`` that are (not) reported.

    Mixes over every policy in ``policies``; evaluated at the points ``y``.
    """
    y = np.asarray(y, float)
    z = np.linspace(-9.0, 9.0, n_z)
    phi = np.exp(-0.5 * z**2) / np.sqrt(2 * np.pi)
    counts = expected_claim_counts(config, policies)
    length = policies["end"] - policies["start"]
    lo, width, edges = _elapsed_pieces(config, policies, tau)
    nu = _location(config, policies["x"])
    sigma = config.severity.sigma
    total = np.zeros_like(y)
    norm = 0.0
    for j0 in range(0, len(counts), 256):
        sl = slice(j0, j0 + 256)
        log_y = nu[sl, None] + sigma * z[None, :]
        if config.delay.profile is not None:
            miss = 1.0 - np.asarray(config.delay.profile.values, float)
            s_int = np.repeat((width[sl] * miss).sum(1)[:, None], n_z, axis=1)
        else:
            rates = np.asarray(config.delay.rates, float)
            knots = np.concatenate([[0.0], np.cumsum(rates[:-1] * np.diff(edges))])
            mult = np.exp(_delay_eta_grid(config, policies["x"][sl], log_y))
            h_lo = np.where(width[sl] > 0, knots + rates * (lo[sl] - edges), 0.0)
            a = mult[:, None, :] * h_lo[:, :, None]
            bw = mult[:, None, :] * (rates[None, :, None] * width[sl][:, :, None])
            with np.errstate(invalid="ignore", divide="ignore"):
                piece = np.exp(-a) * (-np.expm1(-bw)) / (mult[:, None, :] * rates[None, :, None])
            s_int = np.where(width[sl][:, :, None] > 0, piece, 0.0).sum(axis=1)
        if reported:
            s_int = width[sl].sum(1)[:, None] - s_int
        dens = (counts[sl] / length[sl])[:, None] * s_int * phi[None, :]
        # cumulative trapezoid in z, per policy
        cum = np.concatenate(
            [np.zeros((dens.shape[0], 1)), np.cumsum((dens[:, 1:] + dens[:, :-1]) * 0.5 * np.diff(z), axis=1)],
            axis=1,
        )
        norm += cum[:, -1].sum()
        zq = (np.log(y)[None, :] - nu[sl, None]) / sigma
        for r in range(cum.shape[0]):
            total += np.interp(zq[r], z, cum[r])
    return total / norm


def with_seed(config: SimConfig, seed: int) -> SimConfig:
    return replace(config, rng_seed=int(seed))
