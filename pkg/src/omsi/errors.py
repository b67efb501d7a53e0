class ShapeError(ValueError):
    """Array dimensions do not chain or do not match a cached forward pass."""


class LabelError(ValueError):
    """A class index is outside ``{0, ..., C-1}``."""


class ConfigError(ValueError):
    """Invalid experiment or strategy configuration."""


class FormatError(ValueError):
    """A data file does not carry the expected IDX magic number."""


class ConsistencyError(ValueError):
    """Paired data files disagree (e.g. image count vs label count)."""


class TruncatedFileError(OSError):
    """A data file ends before its declared payload."""


class EvaluationError(ValueError):
    """Metric requested on an empty dataset."""
