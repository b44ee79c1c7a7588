"""Zero-inflated negative binomial claim counts with a thinning offset.

Parameterization (mean form): with probability ``q`` the count is a
structural zero, otherwise it is negative binomial with mean ``mu`` and
dispersion ``r``,

    NB(k; mu, r) = C(k + r - 1, k) (mu / (mu + r))^k (r / (mu + r))^r.

For policy ``j`` the reported count at valuation ``tau`` has
``mu_j = xi_j p_j theta_j`` where ``p_j`` is the average inclusion
probability and ``xi_j`` the exposure earned by ``tau``. Given ``n``
reported claims, the IBNR count is again ZINB with

    q~ = q 1{n = 0} / (q + (1 - q) (1 + theta xi p / r)^(-r))
    theta~ = theta (r + n) / (r + theta xi p)
    r~ = r + n

and NB mean ``(1 - p) xi theta~``. ``r = inf`` is the Poisson limit.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import digamma, expit, gammaln, log_expit

from .core import fmt
from .errors import BoundaryWarning, ConvergenceError, DegenerateFitError, InvalidArgumentError

FAMILIES = ("zinb", "nb", "poisson")

_LOGR_BOUNDS = (-5.0, 15.0)
_ZERO_BOUNDS = (-30.0, 30.0)


# -- pmf -----------------------------------------------------------------------


def _nb_logpmf(k, mu, r):
    k = np.asarray(k, dtype=float)
    mu = np.asarray(mu, dtype=float)
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        pois = k * np.log(mu) - mu - gammaln(k + 1)
        rr = np.where(np.isinf(r), 1.0, r)
        nb = (
            gammaln(k + rr) - gammaln(rr) - gammaln(k + 1)
            + k * (np.log(mu) - np.log(mu + rr))
            - rr * np.log1p(mu / rr)
        )
        out = np.where(np.isinf(r), pois, nb)
    return np.where((k == 0) & (mu == 0), 0.0, np.where(mu == 0, -np.inf, out))


def zinb_logpmf(k, q, theta, r):
    k = np.asarray(k)
    q = np.asarray(q, dtype=float)
    lnb = _nb_logpmf(k, theta, r)
    with np.errstate(divide="ignore"):
        l1q = np.log1p(-q)
        lq = np.log(q)
    return np.where(k == 0, np.logaddexp(lq, l1q + lnb), l1q + lnb)


def zinb_pmf(k, q, theta, r):
    """ZINB probability of ``k`` claims; ``theta`` is the NB mean.

    ``r = inf`` gives the zero-inflated Poisson. Vectorized over all
    arguments.
    """
    k_arr = np.asarray(k)
    q_arr = np.asarray(q, dtype=float)
    th = np.asarray(theta, dtype=float)
    r_arr = np.asarray(r, dtype=float)
    if np.any(k_arr < 0) or np.any(k_arr != np.floor(k_arr)):
        raise InvalidArgumentError("k must be a nonnegative integer")
    if np.any(~((q_arr >= 0) & (q_arr <= 1))):
        raise InvalidArgumentError("q must lie in [0, 1]")
    if np.any(~(th >= 0)) or np.any(~(r_arr > 0)):
        raise InvalidArgumentError("theta must be >= 0 and r > 0")
    out = np.exp(zinb_logpmf(k_arr, q_arr, th, r_arr))
    return float(out) if out.ndim == 0 else out


# -- model ---------------------------------------------------------------------


@dataclass(frozen=True)
class ZinbModel:
    """Fitted count model.

    ``beta_zero`` are the coefficients of ``logit q`` on ``[1, x, xi]``
    (``None`` when there is no zero inflation); ``beta_mean`` those of
    ``log theta`` on ``[1, x]``; ``dispersion`` is ``r`` (``inf`` for
    Poisson).
    """

    beta_mean: np.ndarray
    dispersion: float
    beta_zero: Optional[np.ndarray] = None
    family: str = "zinb"
    covariate_names: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        bm = np.array(self.beta_mean, dtype=float).reshape(-1)
        if bm.size == 0 or not np.all(np.isfinite(bm)):
            raise InvalidArgumentError("beta_mean must be a finite vector")
        bm.setflags(write=False)
        object.__setattr__(self, "beta_mean", bm)
        if self.beta_zero is not None:
            bz = np.array(self.beta_zero, dtype=float).reshape(-1)
            if bz.size != bm.size + 1 or not np.all(np.isfinite(bz)):
                raise InvalidArgumentError("beta_zero needs intercept, slopes and exposure coefficient")
            bz.setflags(write=False)
            object.__setattr__(self, "beta_zero", bz)
        if not self.dispersion > 0:
            raise InvalidArgumentError("dispersion r must be > 0")
        if self.family not in FAMILIES:
            raise InvalidArgumentError(f"unknown count family {self.family!r}")
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    @property
    def n_covariates(self) -> int:
        return len(self.beta_mean) - 1

    def _rows(self, x, n=None):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1) if self.n_covariates else np.zeros((1, 0))
        if x.shape[1] != self.n_covariates:
            raise InvalidArgumentError(
                f"count model expects {self.n_covariates} covariates, got {x.shape[1]}"
            )
        return x

    def theta(self, x) -> np.ndarray:
        x = self._rows(x)
        return np.exp(self.beta_mean[0] + x @ self.beta_mean[1:])

    def zero_prob(self, x, exposure) -> np.ndarray:
        x = self._rows(x)
        if self.beta_zero is None:
            return np.zeros(len(x))
        xi = np.broadcast_to(np.asarray(exposure, dtype=float), (len(x),))
        return expit(self.beta_zero[0] + x @ self.beta_zero[1:-1] + self.beta_zero[-1] * xi)

    def to_dict(self) -> dict:
        return {
            "kind": "zinb-counts",
            "family": self.family,
            "beta_mean": self.beta_mean.tolist(),
            "beta_zero": None if self.beta_zero is None else self.beta_zero.tolist(),
            "dispersion": None if np.isinf(self.dispersion) else self.dispersion,
            "covariate_names": list(self.covariate_names),
            "diagnostics": dict(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ZinbModel":
        r = d.get("dispersion")
        return cls(
            beta_mean=np.asarray(d["beta_mean"], float),
            dispersion=float("inf") if r is None else float(r),
            beta_zero=None if d.get("beta_zero") is None else np.asarray(d["beta_zero"], float),
            family=d.get("family", "zinb"),
            covariate_names=tuple(d.get("covariate_names", ())),
            diagnostics=dict(d.get("diagnostics", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


# -- likelihood ----------------------------------------------------------------


@dataclass(frozen=True)
class CountDesign:
    """Per-policy data for the count fit.

    ``offsets`` are ``xi_eff * p`` (the NB mean is ``offset * theta``);
    ``exposure`` is the contract exposure used in the zero-inflation part.
    """

    counts: np.ndarray
    offsets: np.ndarray
    covariates: np.ndarray
    exposure: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.counts)
        off = np.asarray(self.offsets, dtype=float)
        x = np.asarray(self.covariates, dtype=float)
        xi = np.asarray(self.exposure, dtype=float)
        n = len(k)
        if x.ndim == 1:
            x = x.reshape(n, -1) if x.size else np.zeros((n, 0))
        if not (len(off) == len(x) == len(xi) == n):
            raise InvalidArgumentError("counts, offsets, covariates and exposure must align")
        if np.any(k < 0) or np.any(k != np.floor(k)):
            raise InvalidArgumentError("counts must be nonnegative integers")
        if np.any(~(off > 0)):
            raise InvalidArgumentError("offsets must be > 0")
        object.__setattr__(self, "counts", k.astype(float))
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "exposure", xi)

    def mean_design(self):
        return np.column_stack([np.ones(len(self.counts)), self.covariates])

    def zero_design(self):
        return np.column_stack([np.ones(len(self.counts)), self.covariates, self.exposure])


def _split(params, family, p_mean, p_zero):
    params = np.asarray(params, dtype=float)
    beta = params[:p_mean]
    gamma = params[p_mean:p_mean + p_zero] if family == "zinb" else None
    log_r = params[-1] if family != "poisson" else np.inf
    return beta, gamma, log_r


def zinb_loglik(params, design: CountDesign, family: str = "zinb"):
    """Log-likelihood and analytic gradient.

    ``params`` packs ``(beta_mean, [beta_zero], [log r])`` with the
    bracketed parts present for the ``zinb`` / non-Poisson families.
    Trial points far outside the data range may overflow; the result is
    then non-finite and rejected by the optimizer.
    """
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _zinb_loglik(params, design, family)


def _zinb_loglik(params, design: CountDesign, family: str):
    X = design.mean_design()
    Z = design.zero_design()
    k = design.counts
    p_mean, p_zero = X.shape[1], Z.shape[1]
    beta, gamma, log_r = _split(params, family, p_mean, p_zero)
    log_mu = np.log(design.offsets) + X @ beta
    mu = np.exp(log_mu)
    if family == "poisson":
        s = k * log_mu - mu - gammaln(k + 1)
        ds_dlogmu = k - mu
    else:
        r = np.exp(log_r)
        log_mr = np.logaddexp(log_mu, log_r)  # log(mu + r)
        s = gammaln(k + r) - gammaln(r) - gammaln(k + 1) + k * (log_mu - log_mr) + r * (log_r - log_mr)
        ds_dlogmu = r * (k - mu) / (mu + r)
        ds_dlogr = r * (digamma(k + r) - digamma(r) + (log_r - log_mr) + (mu - k) / (mu + r))
    if family == "zinb":
        eta = Z @ gamma
        lq, l1q = log_expit(eta), log_expit(-eta)
        zero = k == 0
        ll_i = np.where(zero, np.logaddexp(lq, l1q + s), l1q + s)
        # posterior probability that a zero is structural
        post = np.where(zero, np.exp(lq - ll_i), 0.0)
        nbw = 1.0 - post
        q = np.exp(lq)
        g_gamma = Z.T @ (post - q)
    else:
        ll_i = s
        nbw = np.ones_like(s)
        g_gamma = None
    g_beta = X.T @ (nbw * ds_dlogmu)
    parts = [g_beta]
    if family == "zinb":
        parts.append(g_gamma)
    if family != "poisson":
        parts.append([np.sum(nbw * ds_dlogr)])
    return float(ll_i.sum()), np.concatenate(parts)


def _numeric_hessian(grad, x, h=1e-5):
    p = len(x)
    H = np.empty((p, p))
    for i in range(p):
        e = np.zeros(p)
        e[i] = h * max(1.0, abs(x[i]))
        H[:, i] = (grad(x + e) - grad(x - e)) / (2 * e[i])
    return 0.5 * (H + H.T)


_PLATEAU_WINDOW = 10
_PLATEAU_GRAD = 1e-4


def _projected_newton(fun, x0, lower, upper, max_iter, tol, ridge=1e-8):
    """Maximize ``fun`` (value, gradient) inside a box by Newton on the free set.

    A coordinate at a bound whose gradient points outward is held fixed.
    Convergence is measured on the projected gradient, on the Newton
    decrement once the line search can no longer improve the objective, or
    on a plateau of the objective while the gradient is already small.
    """
    x = np.clip(np.asarray(x0, float), lower, upper)
    f, g = fun(x)

    def proj_grad(x, g):
        pg = g.copy()
        pg[(x <= lower) & (g < 0)] = 0.0
        pg[(x >= upper) & (g > 0)] = 0.0
        return pg

    it = 0
    history = [f]
    for it in range(1, max_iter + 1):
        pg = proj_grad(x, g)
        if np.max(np.abs(pg)) < tol:
            return x, f, g, it - 1, True
        # plateau: the fitted law has settled while some coefficient drifts along a flat ridge
        if len(history) > _PLATEAU_WINDOW and np.max(np.abs(pg)) < _PLATEAU_GRAD and \
                f - history[-_PLATEAU_WINDOW - 1] < 1e-10 * (1.0 + abs(f)):
            return x, f, g, it - 1, True
        free = pg != 0
        H = _numeric_hessian(lambda z: fun(z)[1], x)
        A = -H[np.ix_(free, free)]
        A = 0.5 * (A + A.T)
        w, V = np.linalg.eigh(A)
        # eigenvalue floor keeps the step an ascent direction when A is indefinite
        w = np.maximum(w, max(ridge, 1e-8 * np.max(np.abs(w), initial=1.0)))
        step = np.zeros_like(x)
        step[free] = V @ ((V.T @ g[free]) / w)
        t = 1.0
        accepted = False
        while t > 1e-12:
            cand = np.clip(x + t * step, lower, upper)
            f_c, g_c = fun(cand)
            if np.isfinite(f_c) and np.all(np.isfinite(g_c)) and f_c >= f + 1e-4 * (g @ (cand - x)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no representable ascent left: converged if the Newton decrement is negligible
            gain = 0.5 * float(g @ step)
            done = np.max(np.abs(proj_grad(x, g))) < tol or gain < 1e-12 * (1.0 + abs(f))
            return x, f, g, it, bool(done)
        x, f, g = cand, f_c, g_c
        history.append(f)
    pg = proj_grad(x, g)
    return x, f, g, it, bool(np.max(np.abs(pg)) < tol)


def _golden_profile(fun_given_logr, lo, hi, tol=1e-6):
    """Golden-section maximization of a profile likelihood over ``log r``."""
    phi = (np.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - phi * (b - a), a + phi * (b - a)
    fc, fd = fun_given_logr(c), fun_given_logr(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = fun_given_logr(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = fun_given_logr(d)
    return 0.5 * (a + b)


def fit_zinb(
    design: CountDesign,
    family: str = "zinb",
    max_iter: int = 200,
    tol: float = 1e-8,
    covariate_names=(),
) -> ZinbModel:
    """Maximum-likelihood count regression with the thinning offset.

    The score is scaled by ``1/n`` before comparing with ``tol``. The
    zero-inflation coefficients are boxed to ``[-30, 30]`` and ``log r``
    to ``[-5, 15]``; ending on such a bound is reported through the
    ``boundary_q`` / ``boundary_r`` diagnostics and a
    :class:`BoundaryWarning`. If the joint Newton iteration fails, ``r`` is
    profiled out by golden-section search and the rest refitted.

    Raises
    ------
    DegenerateFitError
        If every count is zero.
    ConvergenceError
        If neither the joint nor the profile fit reaches ``tol``.
    """
    if family not in FAMILIES:
        raise InvalidArgumentError(f"unknown count family {family!r}")
    k = design.counts
    n = len(k)
    if n == 0 or not np.any(k > 0):
        raise DegenerateFitError("all counts are zero; the count model is not identified")
    X = design.mean_design()
    p_mean = X.shape[1]
    p_zero = X.shape[1] + 1 if family == "zinb" else 0

    # start: Poisson-style intercept, small zero inflation, moderate dispersion
    beta0 = np.zeros(p_mean)
    beta0[0] = np.log(k.sum() / design.offsets.sum())
    x0 = [beta0]
    lo, hi = [np.full(p_mean, -np.inf)], [np.full(p_mean, np.inf)]
    if family == "zinb":
        g0 = np.zeros(p_zero)
        g0[0] = -2.0
        x0.append(g0)
        lo.append(np.full(p_zero, _ZERO_BOUNDS[0]))
        hi.append(np.full(p_zero, _ZERO_BOUNDS[1]))
    if family != "poisson":
        x0.append([1.0])
        lo.append([_LOGR_BOUNDS[0]])
        hi.append([_LOGR_BOUNDS[1]])
    x0, lower, upper = (np.concatenate(v) for v in (x0, lo, hi))

    def fun(theta):
        ll, g = zinb_loglik(theta, design, family)
        return ll / n, g / n

    # a Poisson fit seeds the mean coefficients
    def pois_fun(b):
        ll, g = zinb_loglik(b, design, "poisson")
        return ll / n, g / n

    b_pois, *_ = _projected_newton(pois_fun, beta0, np.full(p_mean, -np.inf),
                                   np.full(p_mean, np.inf), max_iter, tol)
    x0[:p_mean] = b_pois

    x, f, g, it, ok = _projected_newton(fun, x0, lower, upper, max_iter, tol)
    method = "newton"
    if not ok:
        # parameters drifting to a boundary are pinned there and the rest refitted
        lo_p, hi_p = lower.copy(), upper.copy()
        pinned = False
        if family != "poisson" and x[-1] > 10.0:
            x[-1] = lo_p[-1] = hi_p[-1] = _LOGR_BOUNDS[1]
            pinned = True
        if family == "zinb":
            sl = slice(p_mean, p_mean + p_zero)
            if np.max(expit(design.zero_design() @ x[sl])) < 1e-3:
                x[sl] = 0.0
                x[p_mean] = _ZERO_BOUNDS[0]
                lo_p[sl] = hi_p[sl] = x[sl]
                pinned = True
        if pinned:
            method = "newton-boundary"
            x, f, g, it2, ok = _projected_newton(fun, x, lo_p, hi_p, max_iter, tol)
            it += it2
            lower, upper = lo_p, hi_p
    if not ok and family != "poisson":
        method = "profile-golden"

        def inner(log_r):
            lo_i, hi_i = lower.copy(), upper.copy()
            lo_i[-1] = hi_i[-1] = log_r
            start = x.copy()
            start[-1] = log_r
            xr, fr, *_ = _projected_newton(fun, start, lo_i, hi_i, max_iter, tol)
            inner.last = xr
            return fr

        log_r = _golden_profile(inner, lower[-1], upper[-1])
        inner(log_r)
        x, f, g, it2, ok = _projected_newton(fun, inner.last, lower, upper, max_iter, tol)
        it += it2
    free = ~((x <= lower) & (g < 0) | (x >= upper) & (g > 0) | (lower == upper))
    gnorm = float(np.max(np.abs(g[free]), initial=0.0))
    beta, gamma, log_r = _split(x, family, p_mean, p_zero)
    r = float(np.exp(log_r)) if family != "poisson" else float("inf")
    q_hat = expit(design.zero_design() @ gamma) if gamma is not None else np.zeros(n)
    boundary_q = bool(gamma is not None and (np.max(q_hat) < 1e-3 or np.any(np.isin(gamma, _ZERO_BOUNDS))))
    boundary_r = bool(family != "poisson" and log_r in _LOGR_BOUNDS)
    diag = {
        "converged": bool(ok),
        "iterations": int(it),
        "grad_norm": gnorm,
        "loglik": float(f * n),
        "n_obs": n,
        "method": method,
        "boundary_q": boundary_q,
        "boundary_r": boundary_r,
        "plateau": bool(ok and gnorm >= tol),
    }
    if not ok:
        raise ConvergenceError(f"count model did not reach score tolerance {tol:g}", diag)
    if boundary_q or boundary_r:
        warnings.warn(
            "count model parameter on its boundary"
            + (" (zero inflation ~ 0)" if boundary_q else "")
            + (" (dispersion at limit)" if boundary_r else ""),
            BoundaryWarning,
            stacklevel=2,
        )
    return ZinbModel(
        beta_mean=beta, dispersion=r, beta_zero=gamma, family=family,
        covariate_names=covariate_names, diagnostics=diag,
    )


# -- conditional IBNR law ------------------------------------------------------


@dataclass(frozen=True)
class IbnrCountLaw:
    """Per-policy law of the IBNR count given the reported count.

    ``theta_tilde`` is in mean form: the IBNR count is
    ``ZINB(q_tilde, (1 - p) * exposure * theta_tilde, r_tilde)``.
    """

    q_tilde: np.ndarray
    theta_tilde: np.ndarray
    r_tilde: np.ndarray
    p: np.ndarray
    exposure: np.ndarray
    policy_ids: tuple = ()

    def __post_init__(self):
        for name in ("q_tilde", "theta_tilde", "r_tilde", "p", "exposure"):
            v = np.array(getattr(self, name), dtype=float).reshape(-1)
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "policy_ids", tuple(self.policy_ids))

    def __len__(self):
        return len(self.q_tilde)

    @property
    def nb_mean(self) -> np.ndarray:
        return (1.0 - self.p) * self.exposure * self.theta_tilde

    def pmf(self, k, j: int = 0):
        """Conditional probability of ``k`` IBNR claims for policy ``j``."""
        return zinb_pmf(k, self.q_tilde[j], self.nb_mean[j], self.r_tilde[j])

    def write_csv(self, path) -> None:
        lam = expected_ibnr_count(self)
        ids = self.policy_ids or tuple(str(j) for j in range(len(self)))
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["policy_id", "q_tilde", "theta_tilde", "r_tilde", "lambda_ibnr"])
            for j in range(len(self)):
                w.writerow([ids[j], fmt(self.q_tilde[j]), fmt(self.theta_tilde[j]),
                            fmt(self.r_tilde[j]), fmt(lam[j])])


def ibnr_conditional(q, theta, r, exposure, p, n_reported, policy_ids=()) -> IbnrCountLaw:
    """Posterior IBNR count law given ``n_reported`` claims already reported.

    ``theta`` is the NB mean per unit exposure and ``exposure`` the
    exposure earned by the valuation date. Vectorized over policies.
    """
    q = np.asarray(q, dtype=float)
    theta = np.asarray(theta, dtype=float)
    xi = np.asarray(exposure, dtype=float)
    p = np.asarray(p, dtype=float)
    n = np.asarray(n_reported, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(~((p >= 0) & (p <= 1))):
        raise InvalidArgumentError("p must lie in [0, 1]")
    if np.any(n < 0) or np.any(n != np.floor(n)):
        raise InvalidArgumentError("n_reported must be a nonnegative integer")
    if np.any(~((q >= 0) & (q <= 1))) or np.any(~(theta > 0)) or np.any(~(r > 0)) or np.any(~(xi > 0)):
        raise InvalidArgumentError("invalid count-model parameters")
    m = theta * xi * p
    poisson = np.isinf(r)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        rr = np.where(poisson, 1.0, r)
        log_p0 = np.where(poisson, -m, -rr * np.log1p(m / rr))
        theta_t = np.where(poisson, theta, theta * (rr + n) / (rr + m))
    p0 = np.exp(log_p0)
    den = q + (1.0 - q) * p0
    q_t = np.where((n == 0) & (q > 0), q / np.where(den > 0, den, 1.0), 0.0)
    q_t = np.clip(q_t, 0.0, 1.0)
    r_t = np.where(poisson, np.inf, r + n)
    shape = np.broadcast(q, theta, xi, p, n, r).shape
    b = lambda a: np.broadcast_to(a, shape)
    return IbnrCountLaw(b(q_t), b(theta_t), b(r_t), b(p), b(xi), policy_ids)


def expected_ibnr_count(law: IbnrCountLaw) -> np.ndarray:
    """``lambda = (1 - q~) (1 - p) xi theta~`` per policy."""
    return (1.0 - law.q_tilde) * law.nb_mean
