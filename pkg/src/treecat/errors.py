"""Exception hierarchy.

Errors fall in three families so the CLI can map them onto exit codes:
``ConfigError`` (1), ``DataError`` (2) and ``InvariantError`` (3).
"""


class TreecatError(Exception):
    """Base class for all package errors."""


class ConfigError(TreecatError, ValueError):
    pass


class DataError(TreecatError, ValueError):
    pass


class InvariantError(TreecatError, AssertionError):
    pass


# geometry
class LatOutOfMercatorBand(DataError):
    pass


class PixelOutOfFrame(DataError):
    pass


class EnuOutOfRange(DataError):
    pass


class ZeroRange(DataError):
    pass


class NoGroundIntersection(DataError):
    pass


# storage
class ParseError(DataError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class InvalidCoordinate(ParseError):
    pass


class DuplicateView(ParseError):
    pass


class EmptyIndex(DataError):
    pass


class OutsideExtent(DataError):
    pass


class UnknownView(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# evaluation / learning
class EmptyGroundTruth(DataError):
    pass


class EmptyPredictions(DataError):
    pass


class UnknownLabel(DataError):
    pass


class MissingView(DataError):
    pass


class SingleClass(DataError):
    pass


class EmptyData(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class UnlabeledPair(DataError):
    pass


class TooManyCandidates(DataError):
    pass


class DegenerateRoad(ConfigError):
    pass


class DegenerateBinsWarning(UserWarning):
    """A histogram bin received no samples; only regularization pins its weight."""


class NoRoadPixelsWarning(UserWarning):
    """The road mask is empty, so every distance is infinite."""
