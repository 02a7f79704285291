"""Exception types shared across the package.

The CLI maps each family onto a stable exit code: format and I/O problems
exit 2, data-contract violations exit 3 and numerical failures exit 4.
"""


class HybridRegError(Exception):
    """Base class for all package errors."""


class FormatError(HybridRegError, ValueError):
    """Malformed or unsupported file content."""


class DimensionMismatchError(HybridRegError, ValueError):
    """Two grids that must agree do not."""


class LevelMismatchError(DimensionMismatchError):
    """A half-resolution field was supplied where a full one is needed (or vice versa)."""


class NonFiniteError(HybridRegError, FloatingPointError):
    """A NaN or Inf showed up in data, a loss value or a gradient."""
