"""Exception and warning types raised across the package."""


class TransportError(Exception):
    """Base class for package errors."""


class ValidationError(TransportError, ValueError):
    """Input data or configuration does not satisfy the expected structure."""


class StructuralViolation(ValidationError):
    """A record breaks the observed-data pattern for its stratum."""

    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


class EmptyStratum(ValidationError):
    """One of the S=0 / S=1 strata has no records."""


class SchemaMismatch(ValidationError):
    """Columns required by a model or bundle are absent from the data."""


class EnumerationInfeasible(TransportError):
    """Discrete support too large for exact enumeration."""


class NumericalFailure(TransportError, ArithmeticError):
    """An optimizer or linear solve could not produce a usable answer."""


class SeparationWarning(RuntimeWarning):
    """Logistic coefficients diverged and were clamped."""


class RankDeficientWarning(RuntimeWarning):
    """Collinear design columns were dropped."""


class PositivityWarning(RuntimeWarning):
    """Denominator probabilities hit the truncation bound."""


class ConvergenceWarning(RuntimeWarning):
    """An iterative procedure stopped at its iteration cap."""
