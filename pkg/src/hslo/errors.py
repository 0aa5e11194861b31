"""Exception hierarchy shared by all hslo modules."""


class HsloError(Exception):
    """Base class for every error raised by this package."""


class DomainError(HsloError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class ConstraintViolation(DomainError):
    """A layout breaks the non-overlap constraint (duplicate cells)."""


class ConfigError(HsloError, ValueError):
    """Invalid or inconsistent configuration."""


class SolverError(HsloError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SingularSystemError(SolverError):
    """The assembled system has no Dirichlet rows (no sink nodes)."""


class FormatError(HsloError, ValueError):
    """Malformed, truncated or corrupted file content."""
