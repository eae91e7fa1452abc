"""Exception hierarchy.

Validation problems (bad input files, wrong shapes, failed preconditions)
derive from :class:`ValidationError`; failures of the numerics themselves
(singular systems, infeasible fits) derive from :class:`NumericalError`.
The CLI maps these to exit codes 2 and 3.
"""


class BBMError(Exception):
    """Base class for all package errors."""


class ValidationError(BBMError, ValueError):
    pass


class NumericalError(BBMError, ArithmeticError):
    pass


class FormatError(ValidationError):
    """Malformed file header or unparseable payload."""


class DimensionMismatch(ValidationError):
    pass


class NonFiniteError(ValidationError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class InsufficientDuration(ValidationError):
    def __init__(self, retained_seconds, minimum_seconds):
        super().__init__(
            f"retained duration {retained_seconds:.1f}s is below the "
            f"minimum of {minimum_seconds:.1f}s"
        )
        self.retained_seconds = retained_seconds
        self.minimum_seconds = minimum_seconds


class InsufficientTimepoints(ValidationError):
    pass


class EmptyParcel(ValidationError):
    pass


class ConstantColumn(ValidationError):
    pass


class RankDeficient(NumericalError):
    pass


class Infeasible(NumericalError):
    pass


class CholeskyFailure(NumericalError):
    pass
