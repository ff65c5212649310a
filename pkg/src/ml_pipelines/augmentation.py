"""Module with training-time augmentation and reference-pair construction."""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import map_coordinates

from src.configs import AugmentConfig
from src.ml_pipelines.normalization import NormalizedStack
from src.utils.errors import InvalidArgumentError


@dataclass(frozen=True)
class AugmentParams:
    """One draw of augmentation parameters.

    Attributes:
        rotation (int): Quarter turns counter-clockwise.
        flip (bool): Mirror left-right after rotating.
        zoom (float): Scale factor applied with bilinear resampling.
        random_crop (bool): Random crop when True, resized center crop otherwise.
        offset (tuple): (row, column) of the random crop's top-left corner.
    """

    rotation: int = 0
    flip: bool = False
    zoom: float = 1.0
    random_crop: bool = False
    offset: Tuple[int, int] = (0, 0)


def zoomed_size(size: int, zoom: float) -> int:
    """Side length of a ``size`` square after zooming."""
    return max(1, int(round(size * zoom)))


def resample(planes: np.ndarray, size: int) -> np.ndarray:
    """Bilinearly resample CxSxS planes to CxNxN, sampling pixel centers."""
    source = planes.shape[-1]
    if size == source:
        return planes
    coords = (np.arange(size) + 0.5) * source / size - 0.5
    rows, cols = np.meshgrid(coords, coords, indexing="ij")
    return np.stack(
        [map_coordinates(p, [rows, cols], order=1, mode="nearest") for p in planes]
    ).astype(planes.dtype)


def draw_augment_params(
    rng: np.random.Generator, size: int, config: AugmentConfig
) -> AugmentParams:
    """Draw augmentation parameters for a ``size`` square input.

    Args:
        rng (np.random.Generator): Source of randomness.
        size (int): Input side length.
        config (AugmentConfig): Probabilities and ranges.

    Returns:
        AugmentParams: The draw.
    """
    rotation = int(rng.integers(0, 4))
    flip = bool(rng.random() < config.p_flip)
    zoom = float(rng.uniform(*config.zoom_range)) if rng.random() < config.p_zoom else 1.0
    random_crop = bool(rng.random() < config.p_random_crop)

    scaled = zoomed_size(size, zoom)
    if scaled < config.crop_size:
        random_crop = False

    offset = (0, 0)
    if random_crop:
        high = scaled - config.crop_size + 1
        offset = (int(rng.integers(0, high)), int(rng.integers(0, high)))

    return AugmentParams(rotation, flip, zoom, random_crop, offset)


def apply_augment(planes: np.ndarray, params: AugmentParams, crop_size: int) -> np.ndarray:
    """Apply one parameter draw identically to every channel.

    Args:
        planes (np.ndarray): CxSxS normalized planes.
        params (AugmentParams): Parameters to apply.
        crop_size (int): Output side length.

    Returns:
        np.ndarray: CxNxN planes, N = crop_size.
    """
    planes = np.asarray(planes)
    if planes.ndim != 3 or planes.shape[1] != planes.shape[2]:
        raise InvalidArgumentError(f"Augmentation needs square CxSxS input, got {planes.shape}")

    out = np.rot90(planes, k=params.rotation, axes=(1, 2))
    if params.flip:
        out = out[:, :, ::-1]
    if params.zoom != 1.0:
        out = resample(np.ascontiguousarray(out), zoomed_size(out.shape[-1], params.zoom))

    if params.random_crop:
        row, col = params.offset
        out = out[:, row : row + crop_size, col : col + crop_size]
    else:
        # centered window, resized only when the view is smaller than the crop
        side = out.shape[-1]
        window = min(side, crop_size)
        start = (side - window) // 2
        out = out[:, start : start + window, start : start + window]
        out = resample(np.ascontiguousarray(out), crop_size)

    return np.clip(np.ascontiguousarray(out), -1.0, 1.0)


def augment(norm, rng: np.random.Generator, config: AugmentConfig = None) -> NormalizedStack:
    """Randomly rotate, flip, zoom and crop a normalized stack.

    Args:
        norm (NormalizedStack | np.ndarray): Square 6xSxS planes.
        rng (np.random.Generator): Source of randomness.
        config (AugmentConfig, optional): Probabilities and output size.

    Returns:
        NormalizedStack: The augmented view.
    """
    config = config or AugmentConfig()
    planes = norm.planes if isinstance(norm, NormalizedStack) else np.asarray(norm)
    stats = norm.stats if isinstance(norm, NormalizedStack) else None

    params = draw_augment_params(rng, planes.shape[-1], config)
    return NormalizedStack(apply_augment(planes, params, config.crop_size), stats)


@dataclass
class PairedExample:
    """A target view and an optional reference view of the same image.

    Attributes:
        target (np.ndarray): 6xHxW clean planes, brightfield first.
        reference (np.ndarray): 6xHxW planes, all zero when absent.
        reference_present (bool): Whether the reference carries a view.
    """

    target: np.ndarray
    reference: np.ndarray
    reference_present: bool

    def __post_init__(self) -> None:
        """Check shapes and the zero-reference invariant."""
        if self.target.shape != self.reference.shape or self.target.shape[0] != 6:
            raise InvalidArgumentError("target and reference must both be 6xHxW")
        if not self.reference_present and np.any(self.reference != 0):
            raise InvalidArgumentError("An absent reference must be all zeros")

    @property
    def target_bf(self) -> np.ndarray:
        """1xHxW target brightfield."""
        return self.target[:1]

    @property
    def target_paint(self) -> np.ndarray:
        """5xHxW clean target paint."""
        return self.target[1:]

    @property
    def reference_bf(self) -> np.ndarray:
        """1xHxW reference brightfield."""
        return self.reference[:1]

    @property
    def reference_paint(self) -> np.ndarray:
        """5xHxW reference paint."""
        return self.reference[1:]


def make_training_pair(
    norm,
    rng: np.random.Generator,
    config: AugmentConfig = None,
    force_reference: Optional[bool] = None,
) -> PairedExample:
    """Build a target view and, most of the time, an independent reference view.

    Args:
        norm (NormalizedStack | np.ndarray): Square 6xSxS planes.
        rng (np.random.Generator): Source of randomness.
        config (AugmentConfig, optional): Augmentation and dropout settings.
        force_reference (bool, optional): Skip the dropout draw and force a branch.

    Returns:
        PairedExample: Target plus reference, the reference zeroed on dropout.
    """
    config = config or AugmentConfig()
    target = augment(norm, rng, config).planes

    keep = rng.random() >= config.reference_dropout
    if force_reference is not None:
        keep = force_reference

    if keep:
        reference = augment(norm, rng, config).planes
    else:
        reference = np.zeros_like(target)

    return PairedExample(target=target, reference=reference, reference_present=bool(keep))
