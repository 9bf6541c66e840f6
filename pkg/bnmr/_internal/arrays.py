"""Read-only numpy array helpers shared by the frozen models."""

import numpy as np
from numpy.typing import ArrayLike, NDArray

from bnmr.errors import DataError

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]


def frozen_float_array(values: ArrayLike) -> FloatArray:
    """Copy values into a read-only float64 array.

    Returns:
        A C-contiguous float64 array that cannot be written to.

    """
    array = np.array(values, dtype=np.float64, copy=True)
    array.flags.writeable = False
    return array


def frozen_binary_array(values: ArrayLike, name: str) -> IntArray:
    """Copy 0/1 values into a read-only int64 array.

    Returns:
        A read-only int64 array whose entries are all 0 or 1.

    Raises:
        DataError: If any entry is not 0 or 1.

    """
    raw = np.asarray(values)
    if raw.size and not np.isin(raw, (0, 1)).all():
        msg = f"{name} must contain only binary values 0/1"
        raise DataError(msg)
    array = np.array(raw, dtype=np.int64, copy=True)
    array.flags.writeable = False
    return array


def require_finite(values: FloatArray, name: str) -> None:
    """Reject NaN or infinite entries.

    Raises:
        DataError: If any entry is NaN or infinite.

    """
    if not np.isfinite(values).all():
        msg = f"{name} contains NaN or infinite values"
        raise DataError(msg)
