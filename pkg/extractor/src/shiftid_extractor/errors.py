"""Exception types raised by the extraction pipeline."""


class ExtractorError(Exception):
    """Base class for every error this package raises on purpose."""


class EncoderNotFound(ExtractorError):
    """The requested encoder id is not in the registry."""


class EmptyImageDir(ExtractorError):
    """The image directory contains no decodable image files."""


class TooManyDecodeFailures(ExtractorError):
    """More than one percent of the images failed to decode."""


class InvalidJob(ExtractorError):
    """An ExtractJob field violates its invariants."""
