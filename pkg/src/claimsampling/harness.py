"""Backtests, error metrics and Monte-Carlo checks of the estimators."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import DEFAULT_CLAMP_FLOOR, InclusionProbabilities, Portfolio, fmt, odds_ratio
from .errors import InvalidArgumentError, ReservingError
from .estimators import CSV_HEADER, ESTIMATORS, ReserveEstimate, aipw_reserve, ipw_reserve, ml_reserve
from .pipeline import FitOptions, evaluate_estimators, fit_models
from .simulator import (
    SimConfig,
    _location,
    expected_ibnr,
    inclusion_probability_array,
    simulate_claims,
    simulate_policies,
)
from .triangle import bucket


def _map(fn, items, threads: int):
    items = list(items)
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


# -- metrics -----------------------------------------------------------------------


def metrics(truth, estimates) -> dict:
    """Mean error (truth - estimate), MAE, RMSE and MAPE.

    MAPE averages over entries with nonzero truth only and is ``None`` if
    there are none.
    """
    t = np.asarray(truth, dtype=float).reshape(-1)
    e = np.asarray(estimates, dtype=float).reshape(-1)
    if len(t) != len(e) or len(t) == 0:
        raise InvalidArgumentError("truth and estimates must have equal length >= 1")
    err = t - e
    nz = t != 0
    return {
        "n": int(len(t)),
        "ME": float(err.mean()),
        "MAE": float(np.abs(err).mean()),
        "RMSE": float(np.sqrt(np.mean(err**2))),
        "MAPE": float(np.mean(np.abs(err[nz]) / np.abs(t[nz]))) if nz.any() else None,
        "n_mape_excluded": int((~nz).sum()),
    }


# -- backtest ----------------------------------------------------------------------


@dataclass
class BacktestRow:
    valuation_date: float
    estimator: str
    truth: Optional[float]
    estimate: Optional[ReserveEstimate] = None
    reason: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.estimate is not None


@dataclass
class BacktestReport:
    grid: list
    estimators: list
    rows: list
    refit: str = "every"
    truth: dict = field(default_factory=dict)

    def summary(self) -> dict:
        out = {}
        for name in self.estimators:
            ok = [r for r in self.rows if r.estimator == name and r.ok and r.truth is not None]
            if ok:
                out[name] = metrics([r.truth for r in ok], [r.estimate.point for r in ok])
        return out

    def best(self) -> dict:
        """Estimator with the smallest absolute value of each metric."""
        s = self.summary()
        best = {}
        for m in ("ME", "MAE", "RMSE", "MAPE"):
            vals = {k: abs(v[m]) for k, v in s.items() if v[m] is not None}
            if vals:
                lo = min(vals.values())
                best[m] = sorted(k for k, v in vals.items() if v == lo)
        return best

    def to_dict(self) -> dict:
        return {
            "grid": list(self.grid),
            "estimators": list(self.estimators),
            "refit": self.refit,
            "rows": [
                {
                    "valuation_date": r.valuation_date,
                    "estimator": r.estimator,
                    "truth": r.truth,
                    "status": "ok" if r.ok else "missing",
                    "reason": r.reason,
                    "estimate": r.estimate.to_dict() if r.ok else None,
                }
                for r in self.rows
            ],
            "metrics": self.summary(),
            "best": self.best(),
        }

    def write(self, out_dir) -> list:
        """Write ``backtest.json``, ``estimates.csv``, ``metrics.csv`` and ``long.csv``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / n for n in ("backtest.json", "estimates.csv", "metrics.csv", "long.csv")]
        paths[0].write_text(json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True) + "\n")
        with paths[1].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(CSV_HEADER) + ["truth", "status"])
            for r in self.rows:
                if r.ok:
                    w.writerow(r.estimate.to_row(r.valuation_date) + [fmt(r.truth), "ok"])
                else:
                    w.writerow([fmt(r.valuation_date), r.estimator, "", "", "", "", "", fmt(r.truth), "missing"])
        with paths[2].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["estimator", "n", "ME", "MAE", "RMSE", "MAPE"])
            for name, m in self.summary().items():
                w.writerow([name, m["n"], fmt(m["ME"]), fmt(m["MAE"]), fmt(m["RMSE"]), fmt(m["MAPE"])])
        with paths[3].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["valuation_date", "series", "value"])
            for tau in self.grid:
                if self.truth.get(tau) is not None:
                    w.writerow([fmt(tau), "truth", fmt(self.truth[tau])])
                for r in self.rows:
                    if r.valuation_date == tau and r.ok:
                        w.writerow([fmt(tau), r.estimator, fmt(r.estimate.point)])
        return paths


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def ibnr_truth(portfolio: Portfolio, tau: float) -> float:
    """Realized IBNR liability at ``tau`` from a portfolio holding later reports."""
    mask = (portfolio.accident_time <= tau) & (portfolio.report_time > tau)
    return float(portfolio.severity[mask].sum())


def backtest(
    portfolio: Portfolio,
    grid: Sequence[float],
    estimators: Sequence[str] = ESTIMATORS,
    refit: str = "every",
    options: Optional[FitOptions] = None,
    truth_known: bool = True,
    threads: int = 1,
    bootstrap: Optional[dict] = None,
) -> BacktestReport:
    """Re-estimate reserves at every date of ``grid`` and compare with the truth.

    ``portfolio`` must contain every claim, including those reported after
    the valuation dates, when ``truth_known`` is set; estimation at a date
    only ever sees the claims reported by that date. With ``refit="once"``
    the model coefficients are fitted at the first date and reused.
    """
    grid = [float(t) for t in grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidArgumentError("valuation grid must be strictly increasing")
    if not grid or grid[0] <= 0:
        raise InvalidArgumentError("valuation grid must be non-empty and positive")
    if refit not in ("every", "once"):
        raise InvalidArgumentError("refit policy must be 'every' or 'once'")
    unknown = [e for e in estimators if e not in ESTIMATORS]
    if unknown:
        raise InvalidArgumentError(f"unknown estimators: {unknown}")
    options = options or FitOptions()
    estimators = list(estimators)

    shared = None
    if refit == "once" and estimators:
        try:
            shared = fit_models(portfolio, grid[0], options).params
        except ReservingError as exc:
            shared = exc

    def at(tau):
        truth = ibnr_truth(portfolio, tau) if truth_known else None
        if not estimators:
            return truth, []
        try:
            if isinstance(shared, ReservingError):
                raise shared
            # a subset view keeps later reports out of the fit
            fitted = fit_models(portfolio, tau, options, params=shared)
            res = evaluate_estimators(portfolio, fitted, estimators, options, bootstrap)
        except ReservingError as exc:
            reason = f"{type(exc).__name__}: {exc}"
            return truth, [BacktestRow(tau, e, truth, reason=reason) for e in estimators]
        rows = []
        for e in estimators:
            v = res[e]
            rows.append(BacktestRow(tau, e, truth, estimate=v) if isinstance(v, ReserveEstimate)
                        else BacktestRow(tau, e, truth, reason=v))
        return truth, rows

    results = _map(at, grid, threads)
    rows = [r for _, rs in results for r in rs]
    truth = {tau: t for tau, (t, _) in zip(grid, results)}
    return BacktestReport(grid, estimators, rows, refit, truth)


# -- Monte-Carlo checks --------------------------------------------------------------


@dataclass
class IdentityReport:
    tau: float
    n_replicates: int
    left: float
    right: float
    gap: float
    se: float

    @property
    def relative_gap(self) -> float:
        return self.gap / self.left if self.left else 0.0

    @property
    def z(self) -> float:
        return self.gap / self.se if self.se > 0 else (0.0 if self.gap == 0 else math.inf)

    def to_dict(self) -> dict:
        d = dict(vars(self))
        d.update(relative_gap=self.relative_gap, z=self.z)
        return d


def validate_ipw_identity(config: SimConfig, tau: float, n_replicates: int = 10_000,
                          threads: int = 1) -> IdentityReport:
    """Monte-Carlo check that expected IBNR equals the odds-weighted reported total.

    The left side is the mean realized IBNR liability; the right side the
    mean of ``sum (1 - pi(tau - T)) / pi(tau - T) * Y`` over reported
    claims with the true, time-only inclusion probability. Both are
    averaged over the same replicates, so the standard error is that of
    the per-replicate difference.
    """
    if not config.homogeneous_marks:
        raise InvalidArgumentError("identity check needs a configuration with time-only reporting")
    policies = simulate_policies(config)

    def one(rep):
        claims = simulate_claims(config, policies, rep)
        t, u, ly = claims["t"], claims["u"], claims["log_y"]
        y = np.exp(ly)
        incurred = t <= tau
        rep_mask = incurred & (t + u <= tau)
        ibnr = float(y[incurred & ~rep_mask].sum())
        pi = inclusion_probability_array(config, policies["x"][claims["policy"][rep_mask]], ly[rep_mask],
                                         tau - t[rep_mask])
        rhs = float(np.dot(odds_ratio(pi), y[rep_mask])) if rep_mask.any() else 0.0
        return ibnr, rhs

    vals = np.array(_map(one, range(n_replicates), threads))
    left, right = vals.mean(axis=0)
    diff = vals[:, 0] - vals[:, 1]
    se = float(diff.std(ddof=1) / np.sqrt(n_replicates)) if n_replicates > 1 else float("nan")
    return IdentityReport(tau, n_replicates, float(left), float(right), float(left - right), se)


def ipw_unbiasedness(config: SimConfig, tau: float, n_replicates: int = 10_000,
                     clamp_floor: float = DEFAULT_CLAMP_FLOOR, threads: int = 1) -> dict:
    """Mean IPW reserve with true probabilities versus the exact expected IBNR liability.

    Policies are held fixed across replicates; the target is the
    quadrature value of the expected IBNR liability given those policies.
    """
    policies = simulate_policies(config)
    target = float(expected_ibnr(config, policies, tau)["liability"].sum())

    def one(rep):
        claims = simulate_claims(config, policies, rep)
        t, u, ly = claims["t"], claims["u"], claims["log_y"]
        m = (t + u <= tau)
        pi = inclusion_probability_array(config, policies["x"][claims["policy"][m]], ly[m], tau - t[m])
        pis = InclusionProbabilities.from_raw(pi, "oracle", clamp_floor)
        ibnr = float(np.exp(ly[(t <= tau) & ~m]).sum())
        return ipw_reserve(np.exp(ly[m]), pis).point, ibnr

    vals = np.array(_map(one, range(n_replicates), threads))
    mean = float(vals[:, 0].mean())
    se = float(vals[:, 0].std(ddof=1) / np.sqrt(n_replicates))
    return {
        "tau": tau,
        "n_replicates": n_replicates,
        "expected_ibnr": target,
        "mean_ipw": mean,
        "se": se,
        "relative_error": (mean - target) / target,
        "mean_realized_ibnr": float(vals[:, 1].mean()),
    }


def distort_probabilities(pi, accident_time, width: float = 1.0, factor: float = 1.3,
                          clamp_floor: float = DEFAULT_CLAMP_FLOOR) -> InclusionProbabilities:
    """Cohort-mean probabilities times ``factor``, clamped to ``[clamp_floor, 1]``."""
    pi = np.asarray(pi, dtype=float)
    k = bucket(accident_time, width)
    sums = np.bincount(k, weights=pi)
    cnt = np.bincount(k)
    mean = sums[k] / cnt[k]
    return InclusionProbabilities.from_raw(np.minimum(mean * factor, 1.0), "distorted", clamp_floor)


CELLS = (("oracle", "oracle"), ("oracle", "biased"), ("distorted", "oracle"), ("distorted", "biased"))


def double_robustness_grid(
    config: SimConfig,
    tau: float,
    n_replicates: int = 1000,
    severity_bias: float = 1.5,
    distortion: float = 1.3,
    cohort_width: float = 1.0,
    cells=CELLS,
    threads: int = 1,
) -> dict:
    """Relative bias of AIPW, IPW and ML under each (pi, severity) specification.

    The correct severity model is the true conditional mean
    ``E[Y | x] = exp(nu(x) + sigma^2 / 2)``, which is the right outcome model
    only when reporting does not depend on the severity itself, so the
    configuration must have ``gamma = 0``. The biased model multiplies it by
    ``severity_bias``. The model IBNR total is the exact expected IBNR count
    per policy times the model severity.
    """
    if config.delay.gamma != 0:
        raise InvalidArgumentError("the robustness grid needs gamma = 0 (reporting independent of severity)")
    policies = simulate_policies(config)
    exp_cnt = expected_ibnr(config, policies, tau)["count"]
    mean_y = np.exp(_location(config, policies["x"]) + 0.5 * config.severity.sigma**2)
    target = float(expected_ibnr(config, policies, tau)["liability"].sum())
    sev = {"oracle": 1.0, "biased": severity_bias}

    def one(rep):
        claims = simulate_claims(config, policies, rep)
        t, u, ly, pol = claims["t"], claims["u"], claims["log_y"], claims["policy"]
        m = t + u <= tau
        y = np.exp(ly[m])
        pi_true = inclusion_probability_array(config, policies["x"][pol[m]], ly[m], tau - t[m])
        pis = {
            "oracle": InclusionProbabilities.from_raw(pi_true, "oracle"),
            "distorted": distort_probabilities(pi_true, t[m], cohort_width, distortion),
        }
        out = []
        for ps, ss in cells:
            y_hat = sev[ss] * mean_y[pol[m]]
            total = ml_reserve(exp_cnt, sev[ss] * mean_y).point
            out.append((
                aipw_reserve(y, y_hat, total, pis[ps]).point,
                ipw_reserve(y, pis[ps]).point,
                total,
            ))
        return out

    vals = np.array(_map(one, range(n_replicates), threads))  # (rep, cell, estimator)
    means = vals.mean(axis=0)
    ses = vals.std(axis=0, ddof=1) / np.sqrt(n_replicates)
    report = {"tau": tau, "n_replicates": n_replicates, "expected_ibnr": target, "cells": []}
    for c, (ps, ss) in enumerate(cells):
        report["cells"].append({
            "pi": ps,
            "severity": ss,
            **{
                f"{name}_relative_bias": float((means[c, e] - target) / target)
                for e, name in enumerate(("AIPW", "IPW", "ML"))
            },
            **{f"{name}_se": float(ses[c, e] / target) for e, name in enumerate(("AIPW", "IPW", "ML"))},
        })
    return report


def bootstrap_coverage(config: SimConfig, tau: float, n_outer: int = 500, n_boot: int = 1000,
                       level: float = 0.9, threads: int = 1) -> dict:
    """Share of simulated portfolios whose IPW bootstrap interval covers the realized IBNR."""
    from .synthetic import bootstrap_reserve

    policies = simulate_policies(config)

    def one(rep):
        claims = simulate_claims(config, policies, rep)
        t, u, ly = claims["t"], claims["u"], claims["log_y"]
        m = t + u <= tau
        pi = inclusion_probability_array(config, policies["x"][claims["policy"][m]], ly[m], tau - t[m])
        iv, _, _ = bootstrap_reserve(np.exp(ly[m]), InclusionProbabilities.from_raw(pi, "oracle"),
                                     n_boot=n_boot, level=level, seed=config.rng_seed + 1_000_003 * (rep + 1))
        truth = float(np.exp(ly[(t <= tau) & ~m]).sum())
        return iv.lo <= truth <= iv.hi

    hits = np.array(_map(one, range(n_outer), threads), dtype=bool)
    cov = float(hits.mean())
    return {"tau": tau, "n_outer": n_outer, "n_boot": n_boot, "level": level, "coverage": cov,
            "se": float(np.sqrt(cov * (1 - cov) / n_outer))}
