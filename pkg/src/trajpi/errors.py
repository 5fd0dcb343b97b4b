"""Exception hierarchy.

Every error raised on bad input derives from :class:`TrajpiError`, which
is itself a ``ValueError`` so callers that only care about "bad input"
can catch the builtin.
"""


class TrajpiError(ValueError):
    pass


class DeltaInvalid(TrajpiError):
    pass


class DeltaTooSmall(TrajpiError):
    pass


class EmptyScores(TrajpiError):
    pass


class AllScalesZero(TrajpiError):
    pass


class BadSplit(TrajpiError):
    pass


class InsufficientData(TrajpiError):
    pass


class DimensionMismatch(TrajpiError):
    pass


class LengthMismatch(TrajpiError):
    pass


class InvalidCorrelation(TrajpiError):
    pass


class InfeasibleAction(TrajpiError):
    pass


class NoFeasibleAction(TrajpiError):
    pass


class SchemaMismatch(TrajpiError):
    pass
