"""Exception hierarchy.

Every error raised on valid-but-bad input derives from :class:`CavprobeError`,
so the CLI can map it to an exit code instead of a traceback.
"""


class CavprobeError(Exception):
    """Base class for all library errors."""


# data model / formats

class DimensionMismatch(CavprobeError):
    pass


class NonFiniteValue(CavprobeError):
    pass


class DuplicateId(CavprobeError):
    pass


class EmptyDataset(CavprobeError):
    pass


class MalformedFile(CavprobeError):
    """Input file does not follow its declared format.

    ``offset`` is a byte offset for binary files and a 1-based line number
    for text files.
    """

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{': '.join(where)}: {message}"
        super().__init__(message)


class IoFailure(CavprobeError):
    pass


# sampling

class UnknownPositiveValue(CavprobeError):
    pass


class NoEligibleGenre(CavprobeError):
    pass


class SubsetTooSmall(CavprobeError):
    pass


# probe training

class SingleClassInput(CavprobeError):
    pass


class NonFiniteLoss(CavprobeError):
    pass


class EmptySampleList(CavprobeError):
    pass


# statistics

class TooFewSamples(CavprobeError):
    pass


class ZeroVariance(CavprobeError):
    pass


# protocol

class AllReplicatesUnreliable(CavprobeError):
    pass


# debiasing

class LambdaOutOfRange(CavprobeError):
    pass


class UnknownId(CavprobeError):
    pass


class MissingAttribute(CavprobeError):
    pass


# synthetic worlds

class InvalidConfig(CavprobeError):
    pass


class ZeroVector(CavprobeError):
    pass
