"""Exception types raised by luxsched."""


class LuxschedError(Exception):
    """Base class for all library errors."""


class ValidationError(LuxschedError, ValueError):
    """Bad input: wrong shape, out-of-range value, malformed file."""


class DimensionMismatchError(ValidationError):
    pass


class InvalidDecompositionError(ValidationError):
    pass


class DegeneratePairError(ValidationError):
    """Both captures were taken at the same light level."""


class NumericalError(LuxschedError, ArithmeticError):
    """A computation produced or received non-finite or non-physical values."""


class NonPhysicalLightError(NumericalError):
    pass


class InstanceTooLargeError(ValidationError):
    pass
