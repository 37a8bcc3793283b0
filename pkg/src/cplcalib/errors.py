"""Exception hierarchy shared by every module in the package."""


class CalibrationError(ValueError):
    """Base class for all numeric and contract failures raised by cplcalib."""


class ZeroDisparity(CalibrationError, ZeroDivisionError):
    pass


class NonFinite(CalibrationError):
    pass


class DegeneratePoint(CalibrationError, ZeroDivisionError):
    pass


class ZeroDenominator(CalibrationError, ZeroDivisionError):
    pass


class NonPositiveInput(CalibrationError):
    pass


class EmptyRangeAfterGuard(CalibrationError):
    pass


class DivergenceDetected(CalibrationError):
    pass


class ShapeMismatch(CalibrationError):
    pass


class DatasetFormatError(CalibrationError):
    """A dataset, ranges file or checkpoint could not be parsed."""
