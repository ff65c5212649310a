"""Module with the MST1 binary tensor format.

Layout, all little-endian: magic ``b"MST1"``, ``ndim`` as uint32, ``ndim`` uint32
dimensions, then the float32 payload in C order. A file therefore holds exactly
``4 + 4 + 4 * ndim + 4 * prod(dims)`` bytes.
"""

import logging
import os
import struct
from pathlib import Path
from typing import Union

import numpy as np
import torch

from src.utils.errors import DataFormatError, InvalidDataError

logger = logging.getLogger(__name__)

MAGIC = b"MST1"
MAX_NDIM = 32
_U32_MAX = 2**32 - 1

PathLike = Union[str, os.PathLike]


def _as_array(tensor) -> np.ndarray:
    if isinstance(tensor, torch.Tensor):
        tensor = tensor.detach().cpu().numpy()
    return np.ascontiguousarray(tensor, dtype="<f4")


def encode_tensor(tensor) -> bytes:
    """Encode a tensor into MST1 bytes.

    Args:
        tensor (np.ndarray | torch.Tensor): Finite values of any shape.

    Raises:
        InvalidDataError: If a value is not finite or a dimension does not fit in uint32.

    Returns:
        bytes: The encoded file content.
    """
    array = _as_array(tensor)

    if not np.isfinite(array).all():
        raise InvalidDataError("Refusing to encode a tensor with non-finite values")
    if array.ndim > MAX_NDIM or any(d > _U32_MAX for d in array.shape):
        raise InvalidDataError(f"Tensor shape {array.shape} does not fit the format")

    header = MAGIC + struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape)
    return header + array.tobytes(order="C")


def decode_tensor(payload: bytes, source: str = "<bytes>") -> np.ndarray:
    """Decode MST1 bytes, validating every header field before allocating.

    Args:
        payload (bytes): Complete file content.
        source (str, optional): Name used in error messages.

    Raises:
        DataFormatError: Naming the field (magic, ndim, dims, data) that is invalid.

    Returns:
        np.ndarray: A float32 array with the stored shape.
    """
    if len(payload) < 8:
        raise DataFormatError(f"{source}: truncated header (field 'magic'/'ndim')")
    if payload[:4] != MAGIC:
        raise DataFormatError(f"{source}: bad magic {payload[:4]!r} (field 'magic')")

    (ndim,) = struct.unpack_from("<I", payload, 4)
    if ndim > MAX_NDIM:
        raise DataFormatError(f"{source}: ndim {ndim} exceeds {MAX_NDIM} (field 'ndim')")

    header_size = 8 + 4 * ndim
    if len(payload) < header_size:
        raise DataFormatError(f"{source}: truncated dimensions (field 'dims')")

    dims = struct.unpack_from(f"<{ndim}I", payload, 8)
    count = 1
    for d in dims:
        count *= d

    expected = header_size + 4 * count
    if len(payload) != expected:
        raise DataFormatError(
            f"{source}: payload has {len(payload) - header_size} bytes, "
            f"dims {list(dims)} need {4 * count} (field 'data')"
        )

    data = np.frombuffer(payload, dtype="<f4", count=count, offset=header_size)
    return data.astype(np.float32).reshape(dims)


def write_tensor(path: PathLike, tensor, durable: bool = False) -> None:
    """Write a tensor to ``path`` in MST1 format.

    Args:
        path (PathLike): Destination file.
        tensor (np.ndarray | torch.Tensor): Finite values.
        durable (bool, optional): fsync the file before returning. Defaults to False.

    Raises:
        InvalidDataError: If the tensor holds non-finite values.
        DataFormatError: On I/O failure, with the path in the message.
    """
    payload = encode_tensor(tensor)
    try:
        with open(path, "wb") as f:
            f.write(payload)
            if durable:
                f.flush()
                os.fsync(f.fileno())
    except OSError as e:
        raise DataFormatError(f"Cannot write tensor '{path}': {e}") from e

    logger.debug("Wrote %s (%d bytes)", path, len(payload))


def read_tensor(path: PathLike) -> np.ndarray:
    """Read an MST1 tensor from ``path``.

    Args:
        path (PathLike): Source file.

    Raises:
        DataFormatError: If the file is missing, unreadable or malformed.

    Returns:
        np.ndarray: The stored float32 tensor.
    """
    try:
        payload = Path(path).read_bytes()
    except OSError as e:
        raise DataFormatError(f"Cannot read tensor '{path}': {e}") from e

    return decode_tensor(payload, source=str(path))
