"""Exception types raised across the package."""


class APTFError(Exception):
    """Base class for all package errors."""


class NonFinite(APTFError, ValueError):
    pass


class ShapeMismatch(APTFError, ValueError):
    pass


class BadSpec(APTFError, ValueError):
    pass


class ParseError(APTFError, ValueError):
    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class NonMonotonicTimestamps(APTFError, ValueError):
    pass


class TooShort(APTFError, ValueError):
    pass


class EmptySplit(APTFError, ValueError):
    pass


class NegativeWeight(APTFError, ValueError):
    pass


class NonFiniteGradient(APTFError, FloatingPointError):
    pass


class TooFewSamples(APTFError, ValueError):
    pass


class BadTrim(APTFError, ValueError):
    pass


class GroupTooSmall(APTFError, ValueError):
    pass


class NoGroundTruth(APTFError, ValueError):
    pass


class ZeroDenominator(APTFError, ZeroDivisionError):
    pass


class IncompatibleRuns(APTFError, ValueError):
    pass


class ConfigError(APTFError, ValueError):
    """Invalid experiment configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key
