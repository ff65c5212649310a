"""Module with RGB compositing of paint channels for inspection."""

import numpy as np

from src.configs import Configs
from src.utils.errors import InvalidArgumentError

COLOR_MATRIX = np.array([Configs.channel_colors[c] for c in Configs.paint_channels]).T


def render_rgb(paint: np.ndarray) -> np.ndarray:
    """Composite normalized paint into an RGB image.

    Each channel is mapped from [-1, 1] to [0, 1], tinted with its colour and
    added; sums are clamped to [0, 1].

    Args:
        paint (np.ndarray): 5xHxW normalized paint.

    Raises:
        InvalidArgumentError: If the input is not 5xHxW.

    Returns:
        np.ndarray: 3xHxW float image.
    """
    paint = np.asarray(paint, dtype=np.float64)
    if paint.ndim != 3 or paint.shape[0] != len(Configs.paint_channels):
        raise InvalidArgumentError(f"Expected 5xHxW paint, got shape {paint.shape}")

    unit = (np.clip(paint, -1.0, 1.0) + 1.0) / 2.0
    rgb = np.tensordot(COLOR_MATRIX, unit, axes=(1, 0))
    return np.clip(rgb, 0.0, 1.0)


def render_brightfield(brightfield: np.ndarray) -> np.ndarray:
    """Grey RGB view of a normalized 1xHxW or HxW brightfield plane."""
    plane = np.asarray(brightfield, dtype=np.float64).reshape(np.shape(brightfield)[-2:])
    unit = (np.clip(plane, -1.0, 1.0) + 1.0) / 2.0
    return np.repeat(unit[None], 3, axis=0)
