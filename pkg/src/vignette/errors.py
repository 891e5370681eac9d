class VignetteError(Exception):
    """Base class for every domain error raised by the toolkit."""


class InputError(VignetteError, ValueError):
    pass


class DimensionError(InputError):
    pass


class ConfigError(VignetteError):
    pass


class EncoderError(VignetteError):
    pass


class MetadataError(VignetteError):
    pass


class ContainerError(VignetteError):
    pass


class NotFoundError(VignetteError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class PreconditionError(VignetteError):
    pass


class UpwardTranscodeError(PreconditionError):
    """Raised when a squeeze would move a video to a higher-quality mapping."""
