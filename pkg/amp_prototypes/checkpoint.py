"""Model checkpoints in the ``AMPC`` binary format.

Layout (little-endian)::

    b"AMPC"  u32 version=1  u32 C  u32 D  u32 D_in  u32 K
    f64 W[D, D_in] (row-major)   f64 b[D]
    per class c:  f64 U_c[D, K] (column-major)   f64 sigma_c[K]
    u64 FNV-1a checksum of every preceding byte

The step and epoch counters are not stored; a loaded model starts at 0.
"""

import logging
import struct
from pathlib import Path
from typing import Tuple, Union

from .errors import AMPError, CorruptCheckpointError, InvariantViolation
from .model import AMPModel

logger = logging.getLogger(__name__)

MAGIC = b'AMPC'
VERSION = 1
_HEADER = struct.Struct('<4s5I')
_CHECKSUM = struct.Struct('<Q')

FNV_OFFSET = 0xcbf29ce484222325
FNV_PRIME = 0x100000001b3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash of *data*."""
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def encode_checkpoint(model: AMPModel) -> bytes:
    body = [_HEADER.pack(MAGIC, VERSION, model.C, model.D, model.D_in, model.K)]
    for name in model.section_order:
        body.append(model.get_module(name).to_bytes())
    payload = b''.join(body)
    return payload + _CHECKSUM.pack(fnv1a_64(payload))


def decode_checkpoint(payload: bytes) -> AMPModel:
    """Parse ``AMPC`` bytes and validate the model invariants.

    Raises
    ------
    CorruptCheckpointError
        Bad magic, version, length or checksum.
    InvariantViolation
        The decoded model is off the manifold or has invalid capacities.
    """
    if len(payload) < _HEADER.size + _CHECKSUM.size:
        raise CorruptCheckpointError("checkpoint is shorter than its header")
    magic, version, C, D, D_in, K = _HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CorruptCheckpointError(f"unsupported checkpoint version {version}")
    if min(C, D, D_in, K) < 1 or K > D:
        raise CorruptCheckpointError(f"invalid dimensions C={C} D={D} D_in={D_in} K={K}")

    expected = _HEADER.size + 8 * (D * D_in + D + C * (D * K + K)) + _CHECKSUM.size
    if len(payload) != expected:
        raise CorruptCheckpointError(f"checkpoint has {len(payload)} bytes, expected {expected}")
    body = payload[:-_CHECKSUM.size]
    (stored,) = _CHECKSUM.unpack_from(payload, len(body))
    if fnv1a_64(body) != stored:
        raise CorruptCheckpointError("checkpoint checksum mismatch")

    model = AMPModel()
    dims = {'C': C, 'D': D, 'D_in': D_in, 'K': K}
    view = memoryview(body)
    offset = _HEADER.size
    for name in model.section_order:
        offset = model.get_module(name).load_from_bytes(view, offset, dims)

    issues = model.validate()
    if issues:
        raise InvariantViolation("; ".join(issues))
    return model


def save_checkpoint(model: AMPModel, path: Union[str, Path]) -> Path:
    """Write *model* to *path*."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(model))
    logger.info("Saved checkpoint (epoch %d, step %d) to %s", model.epoch, model.step, path)
    return path


def load_checkpoint(path: Union[str, Path]) -> AMPModel:
    """Read and validate a checkpoint file."""
    path = Path(path)
    model = decode_checkpoint(path.read_bytes())
    logger.info("Loaded checkpoint from %s", path)
    return model


def validate_checkpoint_file(path: Union[str, Path]) -> Tuple[bool, str]:
    """
    Check that *path* holds a readable, valid checkpoint.

    Returns
    -------
    tuple of (bool, str)
        ``(True, "")`` when valid, otherwise ``(False, reason)``.
    """
    try:
        load_checkpoint(path)
    except FileNotFoundError:
        return False, f"File not found: {path}"
    except (AMPError, OSError) as e:
        return False, str(e)
    return True, ""
