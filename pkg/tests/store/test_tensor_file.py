"""Module to test the MST1 tensor format."""

import struct

import numpy as np
import pytest
import torch

from src.store.tensor_file import decode_tensor, encode_tensor, read_tensor, write_tensor
from src.utils.errors import DataFormatError, InvalidDataError


def test_encoded_size_of_2x3_tensor():
    """A 2x3 tensor takes 4 + 4 + 8 + 24 = 40 bytes."""
    payload = encode_tensor(np.arange(6, dtype=np.float32).reshape(2, 3))

    assert len(payload) == 40
    assert payload[:4] == b"MST1"
    assert struct.unpack_from("<3I", payload, 4) == (2, 2, 3)


def test_write_and_read_back(tmp_path):
    """Test that a written torch tensor reads back with the same shape and values.

    Args:
        tmp_path: Temporary directory.
    """
    tensor = torch.linspace(-1, 1, 60).reshape(3, 4, 5)
    write_tensor(tmp_path / "t.mst", tensor, durable=True)

    restored = read_tensor(tmp_path / "t.mst")
    assert restored.dtype == np.float32
    np.testing.assert_array_equal(restored, tensor.numpy())


def test_scalar_tensor():
    """A zero-dimensional tensor has an empty dimension list and one value."""
    restored = decode_tensor(encode_tensor(np.float32(2.5)))
    assert restored.shape == ()
    assert float(restored) == 2.5


@pytest.mark.parametrize(
    "payload, field",
    [
        (b"MST", "magic"),
        (b"XXXX" + struct.pack("<I", 0), "magic"),
        (b"MST1" + struct.pack("<I", 99), "ndim"),
        (b"MST1" + struct.pack("<II", 2, 2), "dims"),
        (b"MST1" + struct.pack("<III", 2, 2, 3) + b"\0" * 20, "data"),
    ],
)
def test_malformed_headers_name_the_field(payload, field):
    """Test that each malformed header is rejected and names the bad field.

    Args:
        payload: Corrupt file content.
        field: Field expected in the error message.
    """
    with pytest.raises(DataFormatError, match=field):
        decode_tensor(payload)


def test_non_finite_values_are_rejected():
    """NaN and infinity cannot be encoded."""
    with pytest.raises(InvalidDataError):
        encode_tensor(np.array([1.0, np.nan]))
    with pytest.raises(InvalidDataError):
        encode_tensor(np.array([np.inf]))


def test_missing_file(tmp_path):
    """Reading a missing file is a data-format error carrying the path.

    Args:
        tmp_path: Temporary directory.
    """
    with pytest.raises(DataFormatError, match="missing.mst"):
        read_tensor(tmp_path / "missing.mst")
