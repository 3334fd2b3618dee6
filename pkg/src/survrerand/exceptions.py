"""Exception hierarchy.

Every error raised deliberately by the package derives from
:class:`SurvRerandError` and carries a CLI exit code so the command line
front end can map failures onto its documented status values.
"""


class SurvRerandError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class DomainError(SurvRerandError, ValueError):
    """An argument lies outside the mathematical domain of a function."""

    exit_code = 1


class ConfigurationError(SurvRerandError, ValueError):
    """Invalid or inconsistent configuration."""

    exit_code = 1


class DataError(SurvRerandError, ValueError):
    """Malformed or invalid input data (CSV parsing, schema, validation)."""

    exit_code = 2


class FactorizationError(SurvRerandError, ArithmeticError):
    """A matrix that should be positive definite is not."""


class DesignError(SurvRerandError, RuntimeError):
    """Treatment assignment could not be produced or evaluated."""


class FitError(SurvRerandError, RuntimeError):
    """A regression fit did not converge or diverged."""


class EstimationError(SurvRerandError, RuntimeError):
    """A survival estimator hit a degenerate risk set or empty arm."""


class InferenceError(SurvRerandError, RuntimeError):
    """Variance or band computation failed."""


class HarnessError(SurvRerandError, RuntimeError):
    """Monte Carlo run aborted (for example, too many failed replicates)."""
