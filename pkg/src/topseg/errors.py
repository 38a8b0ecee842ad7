"""Exception hierarchy shared by every pipeline stage."""


class TopSegError(Exception):
    """Base class for all errors raised by topseg."""


class ConfigError(TopSegError, ValueError):
    """A configuration value is out of range or inconsistent."""


class FormatError(TopSegError, ValueError):
    """A file could not be parsed (malformed WAV header, bad label line, ...)."""


class UnsupportedFormatError(FormatError):
    pass


class EmptyRecordingError(TopSegError, ValueError):
    pass


class ConstantSignalError(TopSegError, ValueError):
    pass


class InsufficientLengthError(TopSegError, ValueError):
    """Signal is too short for the requested embedding or window."""


class DegenerateWindowError(TopSegError, ValueError):
    pass


class OracleSizeError(TopSegError, ValueError):
    pass


class InvalidPairError(TopSegError, ValueError):
    pass


class AggregationError(TopSegError, ValueError):
    pass


class CacheInvalidError(TopSegError):
    """Cache file is missing, truncated, or was written with another config."""


class ModelInputError(TopSegError, ValueError):
    pass


class TrainingError(TopSegError, RuntimeError):
    pass


class LabelError(TopSegError, ValueError):
    pass


class EvaluationError(TopSegError, ValueError):
    pass
