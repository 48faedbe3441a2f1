"""Exception hierarchy shared across the toolkit."""


class BlurkitError(Exception):
    """Base class for all toolkit errors."""


class DomainError(BlurkitError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigurationError(BlurkitError, ValueError):
    """Parameters are inconsistent with each other or with the data."""


class CoverageError(BlurkitError, ValueError):
    """Fine samples do not cover the requested exposure window."""


class AlignmentError(BlurkitError, ValueError):
    """A window boundary falls inside a fine sample."""


class IngestionError(BlurkitError, OSError):
    """Frames on disk are missing or inconsistent."""

    def __init__(self, message, files=()):
        super().__init__(message)
        self.files = list(files)


class UnsupportedOperationError(BlurkitError):
    """The requested operation needs a capability that was not supplied."""


class CheckpointError(BlurkitError):
    """Checkpoint file is corrupt or has an incompatible version."""


class NonFiniteLossError(BlurkitError, FloatingPointError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
