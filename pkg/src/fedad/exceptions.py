"""Exception hierarchy shared by all fedad modules."""


class FedadError(Exception):
    """Base class for every error raised by this package."""


class ParseError(FedadError, ValueError):
    def __init__(self, row, column, message=""):
        self.row = row
        self.column = column
        detail = f": {message}" if message else ""
        super().__init__(f"parse error at row {row}, column {column}{detail}")


class EmptySeries(FedadError, ValueError):
    pass


class DimensionMismatch(FedadError, ValueError):
    pass


class SeriesTooShort(FedadError, ValueError):
    pass


class InvalidFractions(FedadError, ValueError):
    pass


class TooFewWindows(FedadError, ValueError):
    pass


class ShapeMismatch(FedadError, ValueError):
    pass


class StaleTape(FedadError, ValueError):
    pass


class NonFiniteGradient(FedadError, ValueError):
    pass


class LengthMismatch(FedadError, ValueError):
    pass


class CorruptUpdate(FedadError, ValueError):
    pass


class EmptyPartition(FedadError, ValueError):
    pass


class MixedRounds(FedadError, ValueError):
    pass


class EmptyData(FedadError, ValueError):
    pass


class TooFewSamples(FedadError, ValueError):
    pass


class SingularCovariance(FedadError, ValueError):
    pass


class DegenerateLabels(FedadError, ValueError):
    pass


class ConfigError(FedadError, ValueError):
    """Invalid experiment configuration; ``field`` is a dotted path."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DegenerateScores(UserWarning):
    """Attention scores summed to a non-positive value; uniform weights used."""
