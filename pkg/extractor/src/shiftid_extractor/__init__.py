"""Image-folder feature extraction for the shift-analysis file formats."""

from .encoders import build_encoder, list_encoders, register_encoder
from .errors import (EmptyImageDir, EncoderNotFound, ExtractorError,
                     InvalidJob, TooManyDecodeFailures)
from .extract import ExtractJob, extract

__all__ = [
    "EmptyImageDir",
    "EncoderNotFound",
    "ExtractJob",
    "ExtractorError",
    "InvalidJob",
    "TooManyDecodeFailures",
    "build_encoder",
    "extract",
    "list_encoders",
    "register_encoder",
]
