"""Module with 8-bit PNG export of RGB composites."""

import logging
from typing import Sequence

import numpy as np
from PIL import Image

from src.utils.errors import DataFormatError, InvalidArgumentError

logger = logging.getLogger(__name__)


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    """Quantize a 3xHxW image in [0, 1] to HxWx3 bytes, rounding halves up.

    Args:
        rgb (np.ndarray): Channel-first image; values outside [0, 1] are clipped.

    Returns:
        np.ndarray: Channel-last uint8 image.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise InvalidArgumentError(f"Expected a 3xHxW image, got shape {rgb.shape}")

    # round(v * 255) with halves going up: 0.5 -> 128
    levels = np.floor(np.clip(rgb, 0.0, 1.0) * 255.0 + 0.5)
    return levels.astype(np.uint8).transpose(1, 2, 0)


def export_png(rgb: np.ndarray, path) -> None:
    """Write a 3xHxW image with values in [0, 1] as an 8-bit RGB PNG.

    Args:
        rgb (np.ndarray): Image to write.
        path: Destination file.

    Raises:
        DataFormatError: On I/O failure.
    """
    try:
        Image.fromarray(to_uint8(rgb)).save(path, format="PNG")
    except OSError as e:
        raise DataFormatError(f"Cannot write image '{path}': {e}") from e

    logger.debug("Wrote %s", path)


def export_composite_grid(
    images: Sequence[np.ndarray], path, columns: int = 3, gap: int = 2
) -> None:
    """Tile several 3xHxW images of equal size into one PNG, row by row.

    Args:
        images (Sequence[np.ndarray]): Images in [0, 1].
        path: Destination file.
        columns (int, optional): Images per row. Defaults to 3.
        gap (int, optional): White separator width in pixels. Defaults to 2.
    """
    if not images:
        raise InvalidArgumentError("Cannot build a grid from zero images")

    _, height, width = np.shape(images[0])
    columns = max(1, min(columns, len(images)))
    rows = -(-len(images) // columns)

    canvas = np.ones(
        (3, rows * height + (rows - 1) * gap, columns * width + (columns - 1) * gap)
    )
    for i, image in enumerate(images):
        r, c = divmod(i, columns)
        y, x = r * (height + gap), c * (width + gap)
        canvas[:, y : y + height, x : x + width] = image

    export_png(canvas, path)
