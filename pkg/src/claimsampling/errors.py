"""Exception and warning types raised across the package."""


class ReservingError(Exception):
    """Base class for all package errors."""

    kind = "reserving-error"


class InvalidArgumentError(ReservingError, ValueError):
    kind = "invalid-argument"


class SchemaError(InvalidArgumentError):
    """Input file or covariate layout does not match the expected schema."""

    kind = "schema-mismatch"


class ConvergenceError(ReservingError):
    """An optimizer hit its iteration cap.

    The partially fitted state is kept on ``diagnostics`` so callers can
    inspect how far the fit got.
    """

    kind = "convergence-failure"

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class SingularDesignError(ReservingError):
    kind = "singular-design"


class DegenerateFitError(ReservingError):
    kind = "degenerate-fit"


class UndefinedCohortError(ReservingError):
    kind = "undefined-cohort"

    def __init__(self, message, cohorts=()):
        super().__init__(message)
        self.cohorts = list(cohorts)


class EstimatorUndefinedError(ReservingError):
    kind = "estimator-undefined"

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = list(columns)


class UndefinedDistributionError(ReservingError):
    kind = "undefined-distribution"


class CalibrationWarning(UserWarning):
    """Balance calibration could not be performed and was left at b = 1."""


class BoundaryWarning(UserWarning):
    """A fitted parameter sits at the edge of its admissible range."""
