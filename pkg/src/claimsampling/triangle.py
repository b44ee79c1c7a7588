"""Run-off triangles and chain-ladder development factors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EstimatorUndefinedError, InvalidArgumentError


def bucket(t, width: float, origin: float = 0.0) -> np.ndarray:
    """Period index of time ``t`` for half-open periods ``(a, a + width]``.

    A time sitting exactly on a period edge belongs to the earlier period;
    times at or before ``origin`` fall in period 0.
    """
    t = np.asarray(t, dtype=float)
    k = np.ceil((t - origin) / width).astype(np.int64) - 1
    return np.maximum(k, 0)


@dataclass(frozen=True)
class Triangle:
    """Cumulative run-off triangle.

    ``values[k, d]`` is the cumulative amount (or count) of accident period
    ``k`` reported by the end of development period ``d``; unknown cells
    are ``nan``. Row ``k`` is known up to ``d = n - 1 - k``.
    """

    values: np.ndarray
    width: float = 1.0
    origin: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] == 0:
            raise InvalidArgumentError("triangle must be a non-empty square array")
        n = v.shape[0]
        known = self.known_mask(n)
        if np.any(np.isnan(v[known])):
            raise InvalidArgumentError("upper-left triangle cells must all be known")
        v[~known] = np.nan
        with np.errstate(invalid="ignore"):
            if np.any(np.diff(v, axis=1) < -1e-9 * np.nanmax(np.abs(v), initial=1.0)):
                raise InvalidArgumentError("cumulative values must be nondecreasing in development")
        if not self.width > 0:
            raise InvalidArgumentError("period width must be > 0")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @staticmethod
    def known_mask(n: int) -> np.ndarray:
        k, d = np.indices((n, n))
        return k + d <= n - 1

    @property
    def n_periods(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_rows(cls, rows, width: float = 1.0, origin: float = 0.0) -> "Triangle":
        """Build from ragged rows of known cumulative values, oldest first."""
        n = len(rows)
        v = np.full((n, n), np.nan)
        for k, row in enumerate(rows):
            row = [c for c in row if c is not None]
            v[k, : len(row)] = row
        return cls(v, width, origin)

    @classmethod
    def from_claims(cls, accident_time, report_time, amounts, tau: float, width: float,
                    origin: float = 0.0) -> "Triangle":
        """Aggregate reported claims into a cumulative triangle at valuation ``tau``.

        The number of periods is the number of periods needed to reach
        ``tau``; the last diagonal may be a partial period.
        """
        t = np.asarray(accident_time, dtype=float)
        r = np.asarray(report_time, dtype=float)
        a = np.asarray(amounts, dtype=float)
        if np.any(r > tau):
            raise InvalidArgumentError("triangle input must only contain claims reported by tau")
        if not tau > origin:
            raise InvalidArgumentError("tau must be after the triangle origin")
        n = int(bucket(tau, width, origin))
        n = max(n + 1, 1)
        k = bucket(t, width, origin)
        d = bucket(r, width, origin) - k
        inc = np.zeros((n, n))
        np.add.at(inc, (k, d), a)
        cum = np.cumsum(inc, axis=1)
        cum[~cls.known_mask(n)] = np.nan
        return cls(cum, width, origin)

    def latest_diagonal(self) -> np.ndarray:
        n = self.n_periods
        return self.values[np.arange(n), n - 1 - np.arange(n)]

    def cohort_of(self, t) -> np.ndarray:
        return np.minimum(bucket(t, self.width, self.origin), self.n_periods - 1)


def development_factors(tri: Triangle) -> np.ndarray:
    """Volume-weighted age-to-age factors ``f_d``, ``d = 0..n-2``.

    Raises
    ------
    EstimatorUndefinedError
        If a factor's denominator (the column sum over contributing rows)
        is not positive; the offending development columns are listed.
    """
    v = tri.values
    n = tri.n_periods
    f = np.ones(max(n - 1, 0))
    bad = []
    for d in range(n - 1):
        rows = np.arange(n - 1 - d)
        den = v[rows, d].sum()
        if not den > 0:
            bad.append(d)
            continue
        f[d] = v[rows, d + 1].sum() / den
    if bad:
        raise EstimatorUndefinedError(f"development factor undefined for columns {bad}", bad)
    return f


def development_to_ultimate(tri: Triangle, factors=None) -> np.ndarray:
    """Cumulative factor taking each cohort's latest value to ultimate."""
    f = development_factors(tri) if factors is None else np.asarray(factors, float)
    n = tri.n_periods
    # cohort k sits at development n-1-k and still needs f_{n-1-k} .. f_{n-2}
    tail = np.concatenate([np.cumprod(f[::-1])[::-1], [1.0]])
    return tail[n - 1 - np.arange(n)]
