"""Exception hierarchy shared by all modules.

The CLI maps these onto process exit codes (validation 2, I/O 3, numeric 4).
"""


class VadError(Exception):
    """Base class for all library errors."""


class ValidationError(VadError):
    """Invalid configuration, shapes, labels, or parameter combinations."""


class FormatError(VadError):
    """Malformed or truncated on-disk artifacts (bad magic, short payload...)."""


class NumericError(VadError):
    """Numerical failure: singular covariance, non-finite values."""
