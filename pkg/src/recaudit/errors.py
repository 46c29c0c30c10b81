"""Exception hierarchy shared across the package."""


class RecauditError(Exception):
    """Base class for all package errors."""


class InvalidInputError(RecauditError):
    """An argument violates a documented precondition."""


class ParseError(RecauditError):
    """A data file is malformed. Carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)


class IntegrityError(RecauditError):
    """A referential or ordering invariant was violated."""


class IneligibleUserError(RecauditError):
    """User trajectory too short to sample a history from."""


class DegenerateInputError(RecauditError):
    """Not enough distinct inputs for the requested operation."""


class InvalidQuotaError(RecauditError):
    """A stratification quota exceeds the stratum size."""


class InsufficientCatalogError(RecauditError):
    """Catalog has fewer scored videos than a slate requires."""


class SessionUnderrunError(RecauditError):
    """A replay policy ran out of history events. Carries the step."""

    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message)


class AlignmentError(RecauditError):
    """Two trajectory logs are not step-aligned."""


class SingularDesignError(RecauditError):
    """Regression design matrix is rank deficient."""

    def __init__(self, message, columns=()):
        self.columns = tuple(columns)
        super().__init__(message)


class InsufficientDataError(RecauditError):
    """Not enough observations to estimate the requested quantity."""


class ConfigMismatchError(RecauditError):
    """Logs produced under different configurations were mixed."""
