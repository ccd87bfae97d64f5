"""Exception hierarchy shared by every module of the package."""


class ShapleyGLAError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ShapleyGLAError, ValueError):
    """Invalid user input (shapes, preconditions, configuration)."""


class NumericalError(ShapleyGLAError, ArithmeticError):
    """A computation could not be carried out reliably."""


class NotSymmetric(ValidationError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class DimensionTooLarge(ValidationError):
    pass


class ZeroVarianceModel(NumericalError):
    pass


class ZeroGradient(NumericalError):
    pass


class NonFiniteEvaluation(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class TooFewSamples(ValidationError):
    pass


class DegenerateCoordinates(NumericalError):
    pass


class ConfigError(ValidationError):
    pass
