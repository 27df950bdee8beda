"""Exception hierarchy. Every error raised on purpose derives from PcmError."""


class PcmError(Exception):
    """Base class for all package errors."""


class ConfigError(PcmError):
    """Invalid configuration, schema, or user-supplied option."""


class ParseError(PcmError):
    """Malformed input file (log rows, timestamps, model documents)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class VersionError(ParseError):
    """Serialized document carries an unsupported format version."""


class ContractError(PcmError, ValueError):
    """A function precondition was violated by the caller."""


class TrainingError(PcmError):
    """Training diverged (non-finite loss or parameters)."""


class UndefinedMetricError(PcmError, ValueError):
    """Metric is undefined for the given inputs, e.g. AUC with one class."""


class GenerationError(PcmError):
    """Synthetic log generation could not satisfy its specification."""


class SearchError(PcmError):
    """Hyperparameter search produced no usable trial."""
