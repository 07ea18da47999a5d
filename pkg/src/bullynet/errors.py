"""Exception types shared across the package.

The CLI maps these onto exit codes: usage/config problems exit 2,
DataError/CheckpointError exit 3, NumericError exits 4.
"""


class ShapeError(ValueError):
    """Tensor dimensions do not satisfy an operation's contract."""


class DataError(ValueError):
    """Malformed or inconsistent input data (CSV rows, vector files, labels)."""


class CheckpointError(ValueError):
    """Checkpoint file is the wrong version, truncated, or mismatched."""


class NumericError(ArithmeticError):
    """Training diverged or produced non-finite values."""
