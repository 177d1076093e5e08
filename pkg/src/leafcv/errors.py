"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 1 for usage problems,
2 for data problems, 3 for numeric divergence.
"""


class LeafCVError(Exception):
    exit_code = 2


class UsageError(LeafCVError):
    exit_code = 1


class DataError(LeafCVError):
    exit_code = 2


# imaging
class UnsupportedFormat(DataError):
    pass


class CorruptStream(DataError):
    pass


class ChannelMismatch(DataError):
    pass


class InvalidImage(DataError):
    pass


# augment
class NonPositiveScale(UsageError):
    pass


# features
class ImageTooSmall(DataError):
    pass


# nn
class ShapeMismatch(DataError):
    pass


class StaleCache(LeafCVError):
    pass


class EmptyClass(DataError):
    pass


class DivergedLoss(LeafCVError):
    exit_code = 3


# gradcam
class InvalidClassId(UsageError):
    pass


class ResolutionMismatch(DataError):
    pass


# metrics
class LabelOutOfRange(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyMatrix(DataError):
    pass


# pipeline
class EmptyClassDir(DataError):
    pass


class UndecodableImage(DataError):
    pass


class ClassTooSmall(DataError):
    pass


class ClassMismatch(DataError):
    pass


class RepresentationMismatch(UsageError):
    pass


class ConfigError(UsageError):
    pass


class CacheFormatError(DataError):
    pass


class IoFailure(DataError):
    pass
