"""Claim and policy records, the valuation partition and inclusion probabilities.

A :class:`Portfolio` stores its claims and policies column-wise in numpy
arrays; :class:`Claim` and :class:`PolicyRecord` are the row views used at
API boundaries and in CSV ingestion.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgumentError, SchemaError

DEFAULT_CLAMP_FLOOR = 1e-4

CLAIM_COLUMNS = ("claim_id", "policy_id", "accident_time", "report_delay", "severity")
POLICY_COLUMNS = ("policy_id", "exposure", "contract_start", "contract_end")


@dataclass(frozen=True)
class Claim:
    claim_id: str
    policy_id: str
    accident_time: float
    report_delay: float
    severity: float
    covariates: tuple = ()

    def __post_init__(self):
        if not self.accident_time >= 0:
            raise InvalidArgumentError(f"claim {self.claim_id}: accident_time must be >= 0")
        if not self.report_delay >= 0:
            raise InvalidArgumentError(f"claim {self.claim_id}: report_delay must be >= 0")
        if not self.severity > 0:
            raise InvalidArgumentError(f"claim {self.claim_id}: severity must be > 0")

    @property
    def report_time(self) -> float:
        return self.accident_time + self.report_delay


@dataclass(frozen=True)
class PolicyRecord:
    policy_id: str
    exposure: float
    contract_start: float
    contract_end: float
    covariates: tuple = ()

    def __post_init__(self):
        if not self.exposure > 0:
            raise InvalidArgumentError(f"policy {self.policy_id}: exposure must be > 0")
        if not self.contract_start < self.contract_end:
            raise InvalidArgumentError(
                f"policy {self.policy_id}: contract_start must precede contract_end"
            )


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


class Portfolio:
    """Policies with exposures plus the claims attached to them.

    Parameters
    ----------
    policy_ids, exposure, contract_start, contract_end : array_like
        One entry per policy.
    policy_covariates : array_like, shape (n_policies, d)
    claim_ids : array_like
    claim_policy : array_like of int
        Row index into the policy arrays for every claim.
    accident_time, report_delay, severity : array_like
    claim_covariates : array_like, shape (n_claims, d)
    covariate_schema : sequence of str
        Column names of the covariate matrices, length ``d``.
    validate : bool
        Check the record invariants. Simulation code that builds portfolios
        by construction can skip this.
    """

    def __init__(
        self,
        *,
        policy_ids,
        exposure,
        contract_start,
        contract_end,
        policy_covariates,
        claim_ids,
        claim_policy,
        accident_time,
        report_delay,
        severity,
        claim_covariates,
        covariate_schema: Sequence[str] = (),
        validate: bool = True,
    ):
        self.covariate_schema = tuple(covariate_schema)
        d = len(self.covariate_schema)
        self.policy_ids = _frozen(policy_ids, dtype=object)
        self.exposure = _frozen(exposure)
        self.contract_start = _frozen(contract_start)
        self.contract_end = _frozen(contract_end)
        self.policy_covariates = _frozen(np.reshape(policy_covariates, (len(self.policy_ids), d)))
        self.claim_ids = _frozen(claim_ids, dtype=object)
        self.claim_policy = _frozen(claim_policy, dtype=np.int64)
        self.accident_time = _frozen(accident_time)
        self.report_delay = _frozen(report_delay)
        self.severity = _frozen(severity)
        self.claim_covariates = _frozen(np.reshape(claim_covariates, (len(self.claim_ids), d)))
        self.report_time = _frozen(self.accident_time + self.report_delay)
        if validate:
            self._validate()

    def _validate(self):
        n = len(self.claim_ids)
        for name in ("claim_policy", "accident_time", "report_delay", "severity"):
            if len(getattr(self, name)) != n:
                raise SchemaError(f"claim column {name} has wrong length")
        m = len(self.policy_ids)
        for name in ("exposure", "contract_start", "contract_end"):
            if len(getattr(self, name)) != m:
                raise SchemaError(f"policy column {name} has wrong length")
        if len(set(self.policy_ids.tolist())) != m:
            raise InvalidArgumentError("policy ids must be unique")
        if np.any(~(self.exposure > 0)):
            raise InvalidArgumentError("policy exposures must be > 0")
        if np.any(~(self.contract_start < self.contract_end)):
            raise InvalidArgumentError("contract_start must precede contract_end")
        if n == 0:
            return
        if np.any((self.claim_policy < 0) | (self.claim_policy >= m)):
            raise InvalidArgumentError("claim references an unknown policy")
        if np.any(~(self.accident_time >= 0)) or np.any(~(self.report_delay >= 0)):
            raise InvalidArgumentError("accident times and report delays must be >= 0")
        if np.any(~(self.severity > 0)):
            raise InvalidArgumentError("severities must be > 0")
        start = self.contract_start[self.claim_policy]
        end = self.contract_end[self.claim_policy]
        outside = (self.accident_time < start) | (self.accident_time > end)
        if np.any(outside):
            bad = self.claim_ids[outside][:5].tolist()
            raise InvalidArgumentError(f"accident times outside contract window: {bad}")

    # -- construction from row records -----------------------------------

    @classmethod
    def from_records(
        cls,
        policies: Iterable[PolicyRecord],
        claims: Iterable[Claim],
        covariate_schema: Sequence[str] = (),
    ) -> "Portfolio":
        policies = list(policies)
        claims = list(claims)
        d = len(covariate_schema)
        index = {}
        for j, p in enumerate(policies):
            if p.policy_id in index:
                raise InvalidArgumentError(f"duplicate policy id {p.policy_id!r}")
            if len(p.covariates) != d:
                raise SchemaError(f"policy {p.policy_id}: expected {d} covariates")
            index[p.policy_id] = j
        claim_policy = []
        for c in claims:
            if c.policy_id not in index:
                raise InvalidArgumentError(f"claim {c.claim_id}: unknown policy {c.policy_id!r}")
            if len(c.covariates) != d:
                raise SchemaError(f"claim {c.claim_id}: expected {d} covariates")
            claim_policy.append(index[c.policy_id])
        return cls(
            policy_ids=[p.policy_id for p in policies],
            exposure=[p.exposure for p in policies],
            contract_start=[p.contract_start for p in policies],
            contract_end=[p.contract_end for p in policies],
            policy_covariates=np.array([p.covariates for p in policies], dtype=float).reshape(len(policies), d),
            claim_ids=[c.claim_id for c in claims],
            claim_policy=claim_policy,
            accident_time=[c.accident_time for c in claims],
            report_delay=[c.report_delay for c in claims],
            severity=[c.severity for c in claims],
            claim_covariates=np.array([c.covariates for c in claims], dtype=float).reshape(len(claims), d),
            covariate_schema=covariate_schema,
        )

    # -- row views ---------------------------------------------------------

    @property
    def n_claims(self) -> int:
        return len(self.claim_ids)

    @property
    def n_policies(self) -> int:
        return len(self.policy_ids)

    def claim(self, i: int) -> Claim:
        return Claim(
            claim_id=self.claim_ids[i],
            policy_id=self.policy_ids[self.claim_policy[i]],
            accident_time=float(self.accident_time[i]),
            report_delay=float(self.report_delay[i]),
            severity=float(self.severity[i]),
            covariates=tuple(self.claim_covariates[i].tolist()),
        )

    def policy(self, j: int) -> PolicyRecord:
        return PolicyRecord(
            policy_id=self.policy_ids[j],
            exposure=float(self.exposure[j]),
            contract_start=float(self.contract_start[j]),
            contract_end=float(self.contract_end[j]),
            covariates=tuple(self.policy_covariates[j].tolist()),
        )

    @property
    def claims(self) -> list:
        return [self.claim(i) for i in range(self.n_claims)]

    @property
    def policies(self) -> list:
        return [self.policy(j) for j in range(self.n_policies)]

    def subset_claims(self, idx) -> "Portfolio":
        """Same policies, only the claims at ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        return Portfolio(
            policy_ids=self.policy_ids,
            exposure=self.exposure,
            contract_start=self.contract_start,
            contract_end=self.contract_end,
            policy_covariates=self.policy_covariates,
            claim_ids=self.claim_ids[idx],
            claim_policy=self.claim_policy[idx],
            accident_time=self.accident_time[idx],
            report_delay=self.report_delay[idx],
            severity=self.severity[idx],
            claim_covariates=self.claim_covariates[idx],
            covariate_schema=self.covariate_schema,
            validate=False,
        )

    def earned_fraction(self, tau: float) -> np.ndarray:
        """Fraction of every contract window that lies before ``tau``."""
        length = self.contract_end - self.contract_start
        elapsed = np.clip(tau - self.contract_start, 0.0, length)
        return elapsed / length


@dataclass(frozen=True)
class ValuationContext:
    """Reported / not-reported split of the claims incurred by ``tau``.

    Claims with accident time after ``tau`` belong to neither set: they are
    not part of the liability at this valuation date.
    """

    tau: float
    reported_idx: np.ndarray
    unreported_idx: np.ndarray

    @property
    def n_reported(self) -> int:
        return len(self.reported_idx)

    @property
    def n_unreported(self) -> int:
        return len(self.unreported_idx)


def partition(portfolio: Portfolio, tau: float) -> ValuationContext:
    """Split the claims incurred by ``tau`` into reported and not reported."""
    if not tau > 0:
        raise InvalidArgumentError(f"valuation time must be > 0, got {tau!r}")
    incurred = portfolio.accident_time <= tau
    reported = portfolio.report_time <= tau
    reported_idx = np.flatnonzero(reported)
    unreported_idx = np.flatnonzero(incurred & ~reported)
    reported_idx.setflags(write=False)
    unreported_idx.setflags(write=False)
    return ValuationContext(float(tau), reported_idx, unreported_idx)


def odds_ratio(pi):
    """Odds of not being reported, ``(1 - pi) / pi``.

    Works on scalars and arrays. Probabilities must already lie in (0, 1];
    clamping is the caller's job.
    """
    p = np.asarray(pi, dtype=float)
    if np.any(~((p > 0) & (p <= 1))):
        raise InvalidArgumentError("inclusion probabilities must lie in (0, 1]")
    out = (1.0 - p) / p
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class InclusionProbabilities:
    """Per-claim inclusion probabilities, clamped to ``[clamp_floor, 1]``.

    Use :meth:`from_raw` to clamp unrestricted values; the constructor
    only checks them.
    """

    values: np.ndarray
    source: str = "model"
    clamp_floor: float = DEFAULT_CLAMP_FLOOR
    n_clamped: int = 0
    raw_min: float = field(default=float("nan"))

    SOURCES = ("model", "chain-ladder-implied", "oracle", "fixed", "distorted")

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.source not in self.SOURCES:
            raise InvalidArgumentError(f"unknown probability source {self.source!r}")
        if not 0 < self.clamp_floor <= 1:
            raise InvalidArgumentError("clamp_floor must lie in (0, 1]")
        if v.size and (np.any(~(v >= self.clamp_floor)) or np.any(v > 1)):
            raise InvalidArgumentError("probabilities must lie in [clamp_floor, 1]")

    @classmethod
    def from_raw(cls, values, source="model", clamp_floor=DEFAULT_CLAMP_FLOOR):
        raw = np.asarray(values, dtype=float)
        if np.any(np.isnan(raw)):
            raise InvalidArgumentError("inclusion probabilities contain NaN")
        low = raw < clamp_floor
        clamped = np.clip(raw, clamp_floor, 1.0)
        return cls(
            clamped,
            source=source,
            clamp_floor=clamp_floor,
            n_clamped=int(low.sum()),
            raw_min=float(raw.min()) if raw.size else float("nan"),
        )

    def __len__(self):
        return len(self.values)

    @property
    def odds(self) -> np.ndarray:
        return odds_ratio(self.values) if len(self) else np.zeros(0)

    def summary(self) -> dict:
        if not len(self):
            return {"n": 0, "n_clamped": 0}
        return {
            "n": len(self),
            "min_pi": float(self.values.min()),
            "max_pi": float(self.values.max()),
            "n_clamped": self.n_clamped,
            "source": self.source,
        }


def as_probabilities(pis, clamp_floor=DEFAULT_CLAMP_FLOOR) -> InclusionProbabilities:
    if isinstance(pis, InclusionProbabilities):
        return pis
    return InclusionProbabilities.from_raw(pis, source="fixed", clamp_floor=clamp_floor)


# -- CSV ingestion -------------------------------------------------------------


def _read_rows(path, required):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if tuple(header[: len(required)]) != required:
            raise SchemaError(
                f"{path}: header must start with {','.join(required)}; got {','.join(header)}"
            )
        rows = [r for r in reader if r]
    for k, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise SchemaError(f"{path}:{k}: expected {len(header)} fields, got {len(r)}")
    return header, rows


def _floats(rows, col, path):
    try:
        return [float(r[col]) for r in rows]
    except ValueError as exc:
        raise SchemaError(f"{path}: non-numeric value in column {col}: {exc}") from None


def read_portfolio_csv(claims_path, policies_path) -> Portfolio:
    """Load claims and policies CSVs into a validated :class:`Portfolio`."""
    c_header, c_rows = _read_rows(claims_path, CLAIM_COLUMNS)
    p_header, p_rows = _read_rows(policies_path, POLICY_COLUMNS)
    schema = tuple(c_header[len(CLAIM_COLUMNS):])
    if tuple(p_header[len(POLICY_COLUMNS):]) != schema:
        raise SchemaError("claims and policies files must carry the same covariate columns")
    d = len(schema)
    index = {}
    for j, r in enumerate(p_rows):
        if r[0] in index:
            raise SchemaError(f"{policies_path}: duplicate policy id {r[0]!r}")
        index[r[0]] = j
    try:
        claim_policy = [index[r[1]] for r in c_rows]
    except KeyError as exc:
        raise SchemaError(f"{claims_path}: unknown policy id {exc.args[0]!r}") from None
    p_num = np.array([_floats(p_rows, k, policies_path) for k in range(1, len(p_header))]).T
    c_num = np.array([_floats(c_rows, k, claims_path) for k in range(2, len(c_header))]).T
    p_num = p_num.reshape(len(p_rows), len(p_header) - 1)
    c_num = c_num.reshape(len(c_rows), len(c_header) - 2)
    return Portfolio(
        policy_ids=[r[0] for r in p_rows],
        exposure=p_num[:, 0],
        contract_start=p_num[:, 1],
        contract_end=p_num[:, 2],
        policy_covariates=p_num[:, 3:].reshape(len(p_rows), d),
        claim_ids=[r[0] for r in c_rows],
        claim_policy=claim_policy,
        accident_time=c_num[:, 0],
        report_delay=c_num[:, 1],
        severity=c_num[:, 2],
        claim_covariates=c_num[:, 3:].reshape(len(c_rows), d),
        covariate_schema=schema,
    )


def fmt(x) -> str:
    """Fixed 17-significant-digit float formatting used in every CSV writer."""
    if x is None:
        return ""
    x = float(x)
    if np.isnan(x):
        return ""
    return format(x, ".17g")


def write_portfolio_csv(portfolio: Portfolio, claims_path, policies_path) -> None:
    schema = list(portfolio.covariate_schema)
    with Path(claims_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(CLAIM_COLUMNS) + schema)
        for i in range(portfolio.n_claims):
            w.writerow(
                [
                    portfolio.claim_ids[i],
                    portfolio.policy_ids[portfolio.claim_policy[i]],
                    fmt(portfolio.accident_time[i]),
                    fmt(portfolio.report_delay[i]),
                    fmt(portfolio.severity[i]),
                ]
                + [fmt(v) for v in portfolio.claim_covariates[i]]
            )
    with Path(policies_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(POLICY_COLUMNS) + schema)
        for j in range(portfolio.n_policies):
            w.writerow(
                [
                    portfolio.policy_ids[j],
                    fmt(portfolio.exposure[j]),
                    fmt(portfolio.contract_start[j]),
                    fmt(portfolio.contract_end[j]),
                ]
                + [fmt(v) for v in portfolio.policy_covariates[j]]
            )
