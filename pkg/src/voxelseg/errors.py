"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems -> 1, data problems -> 2,
numerical failures -> 3.
"""


class VoxelsegError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(VoxelsegError):
    """Tensor shapes or extents violate an operation's contract."""


class EngineError(VoxelsegError):
    """Autodiff bookkeeping violation (tape misuse, non-scalar loss, ...)."""


class ConfigError(VoxelsegError):
    """Bad run configuration: unknown key, unparsable value, invalid combination."""


class DataError(VoxelsegError):
    """Dataset-level problem: missing files, bad labels, incompatible extents."""


class NiftiError(DataError):
    """Malformed or unsupported NIfTI-1 file."""


class CheckpointError(DataError):
    """Malformed, truncated, or incompatible checkpoint file."""


class NumericalError(VoxelsegError):
    """Non-finite values or failed numerical verification."""
