"""Exception hierarchy shared by all modules."""


class CookError(Exception):
    """Base class for every error raised by the package."""


class ShapeError(CookError, ValueError):
    """Array shapes do not compose."""


class ParameterError(CookError, ValueError):
    """An argument is outside its valid range."""


class FormatError(CookError, ValueError):
    """A container file is malformed."""


class NumericError(CookError, ArithmeticError):
    """A computation produced NaN or Inf."""


class ConstraintError(CookError):
    """A similarity constraint could not be met."""


class UndefinedMetricError(CookError, ValueError):
    """A metric is undefined for the given input (e.g. AUC with one class)."""
