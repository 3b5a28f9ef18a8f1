"""Exception hierarchy shared across the package."""


class CcbmError(Exception):
    """Base class for all package errors."""


class ConfigError(CcbmError):
    """Invalid model or training configuration."""


class DimensionError(CcbmError):
    """Operand shapes do not agree."""


class DataFormatError(CcbmError):
    """A dataset or bank file failed validation.

    Carries file and line context where available.
    """

    def __init__(self, message, path=None, line=None):
        ctx = ""
        if path is not None:
            ctx = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + ctx)
        self.path = path
        self.line = line


class DegenerateEmbeddingError(CcbmError):
    """An embedding row has zero norm; cosine terms are undefined."""


class UndefinedMetricError(CcbmError):
    """The metric is undefined for the given inputs (e.g. one class only)."""


class DivergenceError(CcbmError):
    """Training loss became non-finite."""

    def __init__(self, epoch, message=None):
        super().__init__(message or f"training loss is non-finite at epoch {epoch}")
        self.epoch = epoch


class CheckpointError(CcbmError):
    """Checkpoint file is missing fields or inconsistent."""


class UsageError(CcbmError):
    """Bad command-line usage."""
