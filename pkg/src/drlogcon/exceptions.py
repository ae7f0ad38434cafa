"""Exception hierarchy shared by the library and the command-line front end."""
from ._pykernels import KernelConvergenceError


class DrlogconError(Exception):
    """Base class for all package errors."""


class DataError(DrlogconError, ValueError):
    """Invalid or degenerate input data."""


class ConvergenceError(DrlogconError, RuntimeError):
    """An iterative solver hit its iteration cap."""


class UsageError(DrlogconError, ValueError):
    """Inconsistent options supplied by the caller."""


__all__ = ["DrlogconError", "DataError", "ConvergenceError", "UsageError",
           "KernelConvergenceError"]
