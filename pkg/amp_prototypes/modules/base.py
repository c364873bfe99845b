"""Base utilities shared by all model modules.

This module defines :class:`BaseModule`, a lightweight helper providing
numeric and array validation routines used by the other modules in
:mod:`amp_prototypes.modules`. Modules store a reference to the parent
:class:`~amp_prototypes.model.AMPModel` instance so they can read the model
dimensions and serialize themselves in the model's section order.
"""

from abc import ABC, abstractmethod
from typing import Tuple, TYPE_CHECKING

import numpy as np

from ..errors import CorruptCheckpointError, NonFiniteError, ShapeError

if TYPE_CHECKING:
    from ..model import AMPModel

F64 = np.dtype('<f8')


class BaseModule(ABC):
    """Base class for all model modules.

    Parameters
    ----------
    model:
        Parent :class:`AMPModel` instance used for dimension lookups.
    """

    def __init__(self, model: 'AMPModel'):
        """Store a reference to the parent model."""
        self._model = model

    def _validate_positive_number(self, value: float, name: str) -> None:
        """Validate that *value* is a positive number.

        Raises
        ------
        ValueError
            If *value* is not greater than zero.
        """
        try:
            f_val = float(value)
        except (ValueError, TypeError):
            raise ValueError(f"{name} must be a positive number, got {value}")

        if not f_val > 0:
            raise ValueError(f"{name} must be a positive number, got {value}")

    def _validate_non_negative_number(self, value: float, name: str) -> None:
        """Validate that *value* is zero or positive."""
        try:
            f_val = float(value)
        except (ValueError, TypeError):
            raise ValueError(f"{name} must be a non-negative number, got {value}")

        if not f_val >= 0:
            raise ValueError(f"{name} must be a non-negative number, got {value}")

    def _validate_shape(self, array: np.ndarray, shape: Tuple[int, ...], name: str) -> np.ndarray:
        """Coerce *array* to float64 and check its shape and finiteness.

        Raises
        ------
        ShapeError
            If the shape differs from *shape*.
        NonFiniteError
            If any entry is NaN or Inf.
        """
        array = np.asarray(array, dtype=np.float64)
        if array.shape != tuple(shape):
            raise ShapeError(f"{name} must have shape {tuple(shape)}, got {array.shape}")
        if not np.all(np.isfinite(array)):
            raise NonFiniteError(f"{name} contains NaN or Inf")
        return array

    @staticmethod
    def _read_f64(payload: memoryview, offset: int, count: int, name: str) -> Tuple[np.ndarray, int]:
        """Read *count* little-endian doubles starting at *offset*."""
        end = offset + count * F64.itemsize
        if end > len(payload):
            raise CorruptCheckpointError(f"checkpoint truncated while reading {name}")
        values = np.frombuffer(payload[offset:end], dtype=F64).astype(np.float64)
        return values, end

    @staticmethod
    def _pack_f64(array: np.ndarray, order: str = 'C') -> bytes:
        return np.asarray(array, dtype=F64).tobytes(order=order)

    @abstractmethod
    def to_bytes(self) -> bytes:
        """Serialize this module's arrays in checkpoint order."""
        pass

    @abstractmethod
    def load_from_bytes(self, payload: memoryview, offset: int, dims: dict) -> int:
        """Load this module's arrays from *payload* starting at *offset*.

        *dims* holds the header dimensions ``C``, ``D``, ``D_in`` and ``K``.

        Returns
        -------
        int
            Offset just past the consumed bytes.
        """
        pass

    @abstractmethod
    def validate(self) -> list:
        """Return a list of invariant problems (empty when valid)."""
        pass
