"""Exception and warning types shared across the package."""


class LrinferError(Exception):
    """Base class for all errors raised by lrinfer."""


class ValidationError(LrinferError, ValueError):
    """Bad input: shapes, ranges, file contents or configuration."""


class SolverError(LrinferError, RuntimeError):
    """A numerical routine could not produce a usable result."""


class LrinferWarning(UserWarning):
    """Advisory condition; execution continues."""
