"""HPTN tensor container.

Layout, little-endian throughout::

    offset  size      field
    0       4         magic b"HPTN"
    4       4         format version, u32 = 1
    8       4         dtype, u32 (0 = f32)
    12      4         rank, u32
    16      8 * rank  dims, u64 each
    ...               zero padding up to byte 64
    64      4 * prod  f32 payload, row-major, last dim fastest

The header is always 64 bytes, so ranks above 6 are not representable.
"""
import logging
import math
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .exceptions import (
    BadMagicError,
    NonFiniteError,
    ShapeError,
    TensorIOError,
    TruncatedPayloadError,
    UnsupportedFormatError,
)
from .models import FeatureMap, Mask

logger = logging.getLogger(__name__)

MAGIC = b'HPTN'
VERSION = 1
DTYPE_F32 = 0
HEADER_SIZE = 64
MAX_RANK = (HEADER_SIZE - 16) // 8
MAX_ELEMENTS = np.iinfo(np.intp).max // 4
KINDS = ('mask', 'feature_map', 'array')

Tensor = Union[FeatureMap, Mask, np.ndarray]


def encode_tensor(tensor: Tensor) -> bytes:
    if isinstance(tensor, (FeatureMap, Mask)):
        tensor.clean()
        values = tensor.data
    else:
        values = np.asarray(tensor)
        if not np.isfinite(values).all():
            raise NonFiniteError("Refusing to write NaN or Inf values")
    if values.ndim > MAX_RANK:
        raise ShapeError(f"Rank {values.ndim} exceeds the container limit of {MAX_RANK}")

    header = struct.pack('<4sIII', MAGIC, VERSION, DTYPE_F32, values.ndim)
    header += struct.pack(f'<{values.ndim}Q', *values.shape)
    header = header.ljust(HEADER_SIZE, b'\x00')
    return header + np.ascontiguousarray(values, dtype='<f4').tobytes()


def decode_tensor(buffer: bytes, kind: str = None, level: str = 'l3') -> Tensor:
    if kind is not None and kind not in KINDS:
        raise ValueError(f"Unknown tensor kind {kind!r}")
    if len(buffer) < len(MAGIC):
        raise TruncatedPayloadError(f"Only {len(buffer)} bytes, the magic alone needs {len(MAGIC)}")
    if buffer[:4] != MAGIC:
        raise BadMagicError(f"Expected magic {MAGIC!r}, found {bytes(buffer[:4])!r}")
    if len(buffer) < HEADER_SIZE:
        raise TruncatedPayloadError(f"Header needs {HEADER_SIZE} bytes, file has {len(buffer)}")

    _, version, dtype, rank = struct.unpack_from('<4sIII', buffer, 0)
    if version != VERSION:
        raise UnsupportedFormatError(f"Unsupported container version {version}")
    if dtype != DTYPE_F32:
        raise UnsupportedFormatError(f"Unsupported dtype code {dtype}")
    if rank > MAX_RANK:
        raise UnsupportedFormatError(f"Rank {rank} exceeds the container limit of {MAX_RANK}")
    dims = struct.unpack_from(f'<{rank}Q', buffer, 16)
    if math.prod(max(dim, 1) for dim in dims) > MAX_ELEMENTS:
        raise UnsupportedFormatError(f"Dims {dims} exceed the addressable size of {MAX_ELEMENTS} elements")

    count = math.prod(dims)
    expected = HEADER_SIZE + 4 * count
    if len(buffer) < expected:
        raise TruncatedPayloadError(f"Payload needs {expected} bytes, file has {len(buffer)}")
    values = np.frombuffer(buffer, dtype='<f4', count=count, offset=HEADER_SIZE).reshape(dims)
    if not np.isfinite(values).all():
        raise NonFiniteError("Payload contains NaN or Inf values")

    if kind is None:
        kind = {2: 'mask', 3: 'feature_map'}.get(rank, 'array')
    if kind == 'mask':
        if rank != 2:
            raise ShapeError(f"A Mask needs 2 dims, header advertises {rank}")
        return Mask(values)
    if kind == 'feature_map':
        if rank != 3:
            raise ShapeError(f"A FeatureMap needs 3 dims, header advertises {rank}")
        return FeatureMap(level=level, data=values)
    return values.astype(np.float32)


def write_tensor(path: Union[str, Path], tensor: Tensor) -> None:
    path = Path(path)
    payload = encode_tensor(tensor)
    try:
        path.write_bytes(payload)
    except OSError as exc:
        raise TensorIOError(path, f"write failed: {exc.strerror or exc}") from exc
    logger.debug("Wrote %d bytes to %s", len(payload), path)


def load_tensor(path: Union[str, Path], kind: str = None, level: str = 'l3') -> Tensor:
    path = Path(path)
    try:
        buffer = path.read_bytes()
    except OSError as exc:
        raise TensorIOError(path, f"read failed: {exc.strerror or exc}") from exc
    return decode_tensor(buffer, kind=kind, level=level)
