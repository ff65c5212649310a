"""Module to test PNG export."""

import numpy as np
import pytest
from PIL import Image

from src.store.png import export_composite_grid, export_png, to_uint8
from src.utils.errors import InvalidArgumentError


def test_to_uint8_rounds_half_up_and_clips():
    """0.5 maps to 128, and values outside [0, 1] are clipped."""
    rgb = np.array([0.5, 0.0, 1.0, -0.3, 1.7, 0.25]).reshape(3, 1, 2)
    out = to_uint8(rgb)

    assert out.shape == (1, 2, 3)
    assert out.dtype == np.uint8
    assert out[0, 0].tolist() == [128, 255, 255]
    assert out[0, 1].tolist() == [0, 0, 64]


def test_to_uint8_rejects_non_rgb():
    """Only 3xHxW images are accepted."""
    with pytest.raises(InvalidArgumentError):
        to_uint8(np.zeros((4, 2, 2)))


def test_export_png(tmp_path):
    """Test that the written file is an RGB PNG with the expected pixels.

    Args:
        tmp_path: Temporary directory.
    """
    rgb = np.zeros((3, 4, 6))
    rgb[2] = 1.0
    export_png(rgb, tmp_path / "blue.png")

    with Image.open(tmp_path / "blue.png") as image:
        assert image.mode == "RGB"
        assert image.size == (6, 4)
        assert image.getpixel((0, 0)) == (0, 0, 255)


def test_composite_grid_layout(tmp_path):
    """Test that tiles are laid out row by row with white gaps.

    Args:
        tmp_path: Temporary directory.
    """
    tiles = [np.zeros((3, 4, 4)) for _ in range(4)]
    export_composite_grid(tiles, tmp_path / "grid.png", columns=3, gap=2)

    with Image.open(tmp_path / "grid.png") as image:
        assert image.size == (3 * 4 + 2 * 2, 2 * 4 + 2)
        assert image.getpixel((4, 0)) == (255, 255, 255)
        assert image.getpixel((0, 0)) == (0, 0, 0)


def test_composite_grid_needs_images(tmp_path):
    """An empty tile list is rejected.

    Args:
        tmp_path: Temporary directory.
    """
    with pytest.raises(InvalidArgumentError):
        export_composite_grid([], tmp_path / "grid.png")
