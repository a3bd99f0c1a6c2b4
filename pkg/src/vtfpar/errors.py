"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
VerificationError -> 3.
"""


class VtfError(Exception):
    """Base class for all package errors."""


class UsageError(VtfError):
    """Bad flags, invalid configuration values, misuse of an API."""


class DataError(VtfError):
    """Broken or inconsistent on-disk data: schemas, frames, checkpoints."""


class VerificationError(VtfError):
    """A numeric verification (gradient check) failed."""
