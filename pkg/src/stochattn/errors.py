"""Exception types shared across the package."""


class StochAttnError(Exception):
    """Base class for errors raised by this package."""


class AllMasked(StochAttnError, ValueError):
    pass


class NonFinite(StochAttnError, ValueError):
    pass


class DimensionMismatch(StochAttnError, ValueError):
    pass


class InvalidConfig(StochAttnError, ValueError):
    pass


class NoStochasticLayers(StochAttnError, ValueError):
    pass


class SingularSystem(StochAttnError, ArithmeticError):
    pass


class MissingTarget(StochAttnError, ValueError):
    pass


class EmptyBatch(StochAttnError, ValueError):
    pass


class TooFewSamples(StochAttnError, ValueError):
    pass


class DegenerateDesign(StochAttnError, ValueError):
    pass


class NonPositiveScale(StochAttnError, ValueError):
    pass


class ZeroExponent(StochAttnError, ArithmeticError):
    pass


class LengthMismatch(StochAttnError, ValueError):
    pass


class EmptyInput(StochAttnError, ValueError):
    pass


class TooFewSnapshots(StochAttnError, ValueError):
    pass


class InvalidRange(StochAttnError, ValueError):
    pass


class EmptySplit(StochAttnError, ValueError):
    pass


class MissingColumn(StochAttnError, KeyError):
    pass


class ParseError(StochAttnError, ValueError):
    """A CSV cell could not be parsed as a number.

    ``row`` is the 1-based data row (the header is not counted) and
    ``column`` the column name.
    """

    def __init__(self, row, column, value=None):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r} as a number")


class EmptyCalibration(EmptyInput):
    pass
