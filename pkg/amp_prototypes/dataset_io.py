"""Labelled raw-tensor datasets and the ``AMPD`` file format.

Layout (little-endian)::

    b"AMPD"  u32 version=1  u32 N  u32 C  u32 D_in  u32 H  u32 W
    u32 labels[N]
    f32 raw[N, D_in, H, W]          (sample order, row-major)

Labels are 0-based both on disk and in memory: class ``c`` of a
``1..C`` labelling is stored as ``c - 1``, and every stored label is below the
header's ``C``. In memory raw tensors are float64 holding
float32-representable values, so writing and reading back is exact.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Tuple, Union

import numpy as np

from .errors import (CorruptDatasetError, EmptyClassError, EmptyDatasetError, LabelError,
                     ShapeError)

logger = logging.getLogger(__name__)

MAGIC = b'AMPD'
VERSION = 1
_HEADER = struct.Struct('<4s6I')


@dataclass
class Dataset:
    """Raw input tensors ``(N, D_in, H, W)`` with integer labels in ``[0, C)``."""

    raw: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.raw.ndim != 4:
            raise ShapeError(f"raw data must be N x D_in x H x W, got shape {self.raw.shape}")
        if self.labels.shape != (self.raw.shape[0],):
            raise ShapeError(
                f"got {self.labels.shape[0] if self.labels.ndim else 0} labels for "
                f"{self.raw.shape[0]} samples"
            )
        if self.num_classes < 1:
            raise LabelError(f"num_classes must be positive, got {self.num_classes}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.raw.shape[0]

    @property
    def channels(self) -> int:
        return self.raw.shape[1]

    @property
    def grid(self) -> Tuple[int, int]:
        return self.raw.shape[2], self.raw.shape[3]

    def class_indices(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)

    def subset(self, indices) -> 'Dataset':
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.raw[indices], self.labels[indices], self.num_classes)

    def require_samples(self) -> None:
        if len(self) == 0:
            raise EmptyDatasetError("dataset has no samples")

    def require_class(self, c: int) -> np.ndarray:
        indices = self.class_indices(c)
        if indices.size == 0:
            raise EmptyClassError(f"dataset has no samples of class {c}")
        return indices

    def batches(self, batch_size: int, order=None) -> Iterator[np.ndarray]:
        """Yield index arrays of at most *batch_size* samples in *order*."""
        order = np.arange(len(self)) if order is None else np.asarray(order)
        for start in range(0, len(order), batch_size):
            yield order[start:start + batch_size]


def save_dataset(dataset: Dataset, path: Union[str, Path]) -> Path:
    """Write *dataset* as an ``AMPD`` file."""
    path = Path(path)
    N, D_in, H, W = dataset.raw.shape
    raw32 = dataset.raw.astype('<f4')
    if not np.array_equal(raw32.astype(np.float64), dataset.raw):
        logger.warning("Raw data is not float32-representable; values will be rounded")
    payload = b''.join([
        _HEADER.pack(MAGIC, VERSION, N, dataset.num_classes, D_in, H, W),
        dataset.labels.astype('<u4').tobytes(),
        raw32.tobytes(),
    ])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    logger.info("Saved dataset with %d samples to %s", N, path)
    return path


def decode_dataset(payload: bytes) -> Dataset:
    """Parse ``AMPD`` bytes; the length must match the header exactly."""
    if len(payload) < _HEADER.size:
        raise CorruptDatasetError("dataset file is shorter than its header")
    magic, version, N, C, D_in, H, W = _HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise CorruptDatasetError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CorruptDatasetError(f"unsupported dataset version {version}")
    expected = _HEADER.size + 4 * N + 4 * N * D_in * H * W
    if len(payload) != expected:
        raise CorruptDatasetError(f"dataset file has {len(payload)} bytes, expected {expected}")
    offset = _HEADER.size
    labels = np.frombuffer(payload, dtype='<u4', count=N, offset=offset).astype(np.int64)
    offset += 4 * N
    raw = np.frombuffer(payload, dtype='<f4', count=N * D_in * H * W, offset=offset)
    raw = raw.astype(np.float64).reshape(N, D_in, H, W)
    try:
        return Dataset(raw, labels, C)
    except LabelError as e:
        raise CorruptDatasetError(str(e))


def load_dataset(path: Union[str, Path]) -> Dataset:
    """Read an ``AMPD`` file."""
    path = Path(path)
    dataset = decode_dataset(path.read_bytes())
    logger.info("Loaded dataset with %d samples from %s", len(dataset), path)
    return dataset


def split_by_class(dataset: Dataset) -> List[np.ndarray]:
    """Sample indices of every class in label order."""
    return [dataset.class_indices(c) for c in range(dataset.num_classes)]
