from .nn.functional import LengthError, ShapeError


class ConfigError(ValueError):
    """Invalid configuration or parameter choice."""


class FormatError(ValueError):
    """A file does not match its declared container format."""


class AlignmentError(ValueError):
    """Speech and EEG embeddings disagree on the frame axis."""


__all__ = ["AlignmentError", "ConfigError", "FormatError", "LengthError", "ShapeError"]
