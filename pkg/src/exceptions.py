class SpatError(Exception):
    """
    Base class of every domain error raised by the toolkit.
    """


class ConfigError(SpatError):
    pass


class UncoveredTime(SpatError):
    """
    No time-of-day schedule entry covers the requested instant.
    """


class InvariantViolation(SpatError):
    """
    A controller transition would break ring-barrier safety. Always an engine bug.
    """


class MalformedRecord(SpatError):
    pass


class MissingTimestamp(SpatError):
    pass


class DegenerateVariable(SpatError):
    """
    A numeric variable has min == max over the sample days (or a categorical one has a single state).
    """


class EmptySpan(SpatError):
    pass


class WidthMismatch(SpatError):
    pass


class ShapeMismatch(SpatError):
    pass


class NonFiniteActivation(SpatError):
    """
    The network produced NaN or Inf. Training halts and reports the batch.
    """


class NoValidEntries(SpatError):
    pass


class HashMismatch(SpatError):
    pass


class MismatchedTestSets(SpatError):
    pass
