class FssamError(Exception):
    """Base class for all pipeline errors"""


class ShapeMismatchError(FssamError):
    pass


class DegenerateMaskError(FssamError):
    """Raised when a mask has no positive weight to pool over"""


class EmptyInputError(FssamError):
    pass


class MissingSupportError(FssamError):
    pass


class InvalidSpecError(FssamError):
    pass


class ConfigError(FssamError):
    pass


class EpisodeError(FssamError):
    """Wraps a failure raised while running one episode"""

    def __init__(self, episode_index: int, cause: Exception):
        self.episode_index = episode_index
        self.cause = cause
        super().__init__(f"episode {episode_index}: {type(cause).__name__}: {cause}")


class FeatureFileError(FssamError):
    pass


class BadMagicError(FeatureFileError):
    pass


class UnsupportedVersionError(FeatureFileError):
    pass


class TruncatedPayloadError(FeatureFileError):
    pass


class MaskRangeViolationError(FeatureFileError):
    pass
