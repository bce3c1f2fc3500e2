"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so keep the three roots
(configuration, data, I/O) separable.
"""


class MoePredictError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(MoePredictError):
    """Invalid specification or dimension mismatch between components."""


class DataError(MoePredictError):
    """Dataset-level problem: empty, inconsistent, or incompatible data."""


class TraceFormatError(DataError):
    """A trace file failed to parse or validate."""


class BadMagicError(TraceFormatError):
    """File does not start with the expected magic bytes."""


class VersionError(TraceFormatError):
    """File declares an unsupported format version."""


class TruncatedFileError(TraceFormatError):
    """File is shorter than its header promises."""


class RecordValidationError(TraceFormatError):
    """A record violates a dataset invariant."""


class UsageError(MoePredictError):
    """An operation was called outside its supported protocol."""
