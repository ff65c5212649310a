"""Module with the clip, square-root and rescale transform and its inverse."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from src.ml_pipelines.percentiles import PercentileStats, compute_stats
from src.synthdata.render import StainStack
from src.utils.errors import InvalidArgumentError, InvalidDataError


@dataclass
class NormalizedStack:
    """Six planes in [-1, 1], brightfield first.

    Attributes:
        planes (np.ndarray): 6xHxW float32 values.
        stats (PercentileStats, optional): Bounds the planes were normalized with.
    """

    planes: np.ndarray
    stats: Optional[PercentileStats] = None

    @property
    def brightfield(self) -> np.ndarray:
        """1xHxW brightfield plane."""
        return self.planes[:1]

    @property
    def paint(self) -> np.ndarray:
        """5xHxW paint planes."""
        return self.planes[1:]


def _raw_planes(stack) -> np.ndarray:
    if isinstance(stack, StainStack):
        return stack.planes()
    return np.asarray(stack)


def _bounds(stats: PercentileStats):
    # channel axis is third from the end for both 6xHxW and Nx6xHxW inputs
    lo, hi = stats.arrays()
    return lo.reshape(6, 1, 1), hi.reshape(6, 1, 1)


def normalize_planes(raw: np.ndarray, stats: PercentileStats) -> np.ndarray:
    """Apply the forward transform to 6xHxW or Nx6xHxW raw planes.

    Per channel: clip to [lo, hi], map to [0, 1], take the square root, map to [-1, 1].
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim < 3 or raw.shape[-3] != 6:
        raise InvalidArgumentError(f"Expected 6 channels on axis -3, got shape {raw.shape}")
    if not np.isfinite(raw).all():
        raise InvalidDataError("Input planes contain non-finite pixels")

    lo, hi = _bounds(stats)
    unit = (np.clip(raw, lo, hi) - lo) / (hi - lo)
    return (2.0 * np.sqrt(unit) - 1.0).astype(np.float32)


def denormalize_planes(norm: np.ndarray, stats: PercentileStats, channels: slice = slice(None)) -> np.ndarray:
    """Invert ``normalize_planes`` on [lo, hi]; values are clamped to [-1, 1] first.

    Args:
        norm (np.ndarray): Normalized planes with channels on axis -3.
        stats (PercentileStats): Bounds used for normalization.
        channels (slice, optional): Which of the six channels ``norm`` holds. Defaults to all.

    Returns:
        np.ndarray: Raw intensities as float32.
    """
    norm = np.clip(np.asarray(norm, dtype=np.float64), -1.0, 1.0)
    lo, hi = _bounds(stats)
    lo, hi = lo[channels], hi[channels]
    unit = ((norm + 1.0) / 2.0) ** 2
    return (lo + unit * (hi - lo)).astype(np.float32)


def preprocess(stack, stats: PercentileStats) -> NormalizedStack:
    """Normalize a raw stack with dataset-level clip bounds.

    Args:
        stack (StainStack | np.ndarray): Raw 6xHxW planes.
        stats (PercentileStats): Dataset clip bounds.

    Raises:
        InvalidDataError: If a pixel is not finite.

    Returns:
        NormalizedStack: Planes in [-1, 1].
    """
    return NormalizedStack(normalize_planes(_raw_planes(stack), stats), stats)


def postprocess(norm, stats: PercentileStats) -> StainStack:
    """Map normalized planes back to raw intensities.

    Args:
        norm (NormalizedStack | np.ndarray): 6xHxW planes, clamped to [-1, 1].
        stats (PercentileStats): Dataset clip bounds.

    Returns:
        StainStack: Raw planes.
    """
    planes = norm.planes if isinstance(norm, NormalizedStack) else norm
    return StainStack.from_planes(denormalize_planes(planes, stats))


class StackNormalizer(BaseEstimator, TransformerMixin):
    """Fit dataset clip bounds and normalize Nx6xHxW raw stacks.

    Args:
        stats (PercentileStats, optional): Precomputed bounds; fit computes them when absent.
    """

    def __init__(self, stats: PercentileStats = None) -> None:
        """Initialize the StackNormalizer class.

        Args:
            stats (PercentileStats, optional): Precomputed bounds.
        """
        self.stats = stats

    def fit(self, X: np.ndarray, y: np.ndarray = None) -> "StackNormalizer":
        """Compute clip bounds from the raw dataset unless they were given.

        Args:
            X (np.ndarray): Nx6xHxW raw stacks.
            y (np.ndarray, optional): Ignored.

        Returns:
            StackNormalizer: The fitted transformer.
        """
        self.stats_ = self.stats if self.stats is not None else compute_stats(X)
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Normalize raw stacks to [-1, 1]."""
        return normalize_planes(X, self.stats_)

    def inverse_transform(self, X: np.ndarray) -> np.ndarray:
        """Map normalized stacks back to raw intensities."""
        return denormalize_planes(X, self.stats_)
