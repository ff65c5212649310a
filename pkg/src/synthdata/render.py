"""Module with the renderer turning a synthetic scene into brightfield and paint planes."""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from src.configs import Configs
from src.synthdata.scene import Cell, PerturbationEffect, SynthScene
from src.utils.errors import InvalidArgumentError
from src.utils.seeding import derive_seed

logger = logging.getLogger(__name__)

PAINT_BACKGROUND = 5.0
BRIGHTFIELD_NOISE = 0.01
# Peak raw intensity of every paint channel, in storage order.
PAINT_LEVELS = {"DNA": 900.0, "RNA": 500.0, "ER": 400.0, "AGP": 450.0, "Mito": 600.0}


@dataclass
class StainStack:
    """One field of view: a brightfield plane and five paint planes.

    Attributes:
        brightfield (np.ndarray): HxW raw intensities.
        paint (np.ndarray): 5xHxW raw intensities in the order DNA, RNA, ER, AGP, Mito.
    """

    brightfield: np.ndarray
    paint: np.ndarray

    def __post_init__(self) -> None:
        """Check that every plane shares the same size."""
        self.brightfield = np.asarray(self.brightfield, dtype=np.float32)
        self.paint = np.asarray(self.paint, dtype=np.float32)
        if self.brightfield.ndim != 2:
            raise InvalidArgumentError("brightfield must be a single HxW plane")
        expected = (len(Configs.paint_channels),) + self.brightfield.shape
        if self.paint.shape != expected:
            raise InvalidArgumentError(
                f"paint must have shape {expected}, got {self.paint.shape}"
            )

    @property
    def height(self) -> int:
        """Plane height in pixels."""
        return self.brightfield.shape[0]

    @property
    def width(self) -> int:
        """Plane width in pixels."""
        return self.brightfield.shape[1]

    def planes(self) -> np.ndarray:
        """Return the six planes stacked as 6xHxW, brightfield first."""
        return np.concatenate([self.brightfield[None], self.paint], axis=0)

    @classmethod
    def from_planes(cls, planes: np.ndarray) -> "StainStack":
        """Build a stack from a 6xHxW array, brightfield first."""
        planes = np.asarray(planes)
        return cls(brightfield=planes[0], paint=planes[1:])


def _soft(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(x))


def _wrap(d: np.ndarray, period: int) -> np.ndarray:
    return (d + period / 2.0) % period - period / 2.0


def _spots(dx, dy, ox, oy, sigma) -> np.ndarray:
    """Sum of isotropic Gaussian spots at offsets (ox, oy) from the cell center."""
    if len(ox) == 0:
        return np.zeros_like(dx)
    d2 = (dx[None] - ox[:, None, None]) ** 2 + (dy[None] - oy[:, None, None]) ** 2
    return np.exp(-d2 / (2.0 * sigma**2)).sum(axis=0)


def _draw_cell(cell: Cell, effect: PerturbationEffect, dx, dy, paint, optics) -> None:
    """Accumulate one cell into the paint planes and brightfield terms in place."""
    a, b, angle = cell.nucleus
    radius = cell.cytoplasm_radius
    dna_seed, rna_seed, er_seed, agp_seed, mito_seed = cell.organelle_seeds

    u = dx * math.cos(angle) + dy * math.sin(angle)
    v = -dx * math.sin(angle) + dy * math.cos(angle)
    rn = np.sqrt((u / a) ** 2 + (v / b) ** 2)
    r = np.hypot(dx, dy)

    nucleus = _soft((1.0 - rn) * 0.5 * (a + b) / 0.75)
    cytoplasm = _soft((radius - r) / 0.75)

    # DNA: nucleus fill, granular when chromatin is remodelled
    rng = np.random.default_rng(dna_seed)
    gain = rng.uniform(0.8, 1.2) * effect.dna_gain
    k = 14
    rho, phi = np.sqrt(rng.uniform(0, 1, k)) * 0.9, rng.uniform(0, 2 * math.pi, k)
    gu, gv = rho * a * np.cos(phi), rho * b * np.sin(phi)
    granules = _spots(u, v, gu, gv, 0.6)
    texture = 1.0 + effect.dna_granularity * (np.clip(granules, 0, 1.5) - 0.3)
    paint[0] += PAINT_LEVELS["DNA"] * gain * nucleus * texture

    # RNA: nucleoli plus a weak cytoplasmic wash
    rng = np.random.default_rng(rna_seed)
    k = int(rng.integers(1, 4))
    rho, phi = rng.uniform(0, 0.4, k), rng.uniform(0, 2 * math.pi, k)
    nucleoli = _spots(u, v, rho * a * np.cos(phi), rho * b * np.sin(phi), 0.9)
    paint[1] += PAINT_LEVELS["RNA"] * (nucleoli * nucleus + 0.15 * cytoplasm)

    # ER: reticulated perinuclear ring
    rng = np.random.default_rng(er_seed)
    lobes, phase = int(rng.integers(5, 9)), rng.uniform(0, 2 * math.pi)
    ring = np.exp(-(((rn - 1.5) / (0.35 * effect.er_width)) ** 2))
    reticulum = 0.7 + 0.3 * np.cos(lobes * np.arctan2(dy, dx) + phase)
    paint[2] += PAINT_LEVELS["ER"] * effect.er_gain * ring * reticulum * cytoplasm

    # AGP: membrane outline plus straight filament strokes
    rng = np.random.default_rng(agp_seed)
    boundary = np.exp(-(((r - radius) / 0.8) ** 2))
    filaments = np.zeros_like(r)
    for theta, shift in zip(rng.uniform(0, math.pi, 3), rng.uniform(-0.5, 0.5, 3)):
        distance = np.abs(-math.sin(theta) * dx + math.cos(theta) * dy - shift * radius)
        filaments += np.exp(-((distance / 0.6) ** 2))
    paint[3] += PAINT_LEVELS["AGP"] * (
        boundary + 0.5 * effect.filament_gain * filaments * cytoplasm
    )

    # Mito: punctate speckles between nucleus and membrane
    rng = np.random.default_rng(mito_seed)
    k = int(round(14 * effect.mito_density))
    inner = max(a, b) * 1.1 / radius
    rho = rng.uniform(min(inner, 0.85), 0.9, k) * radius
    phi = rng.uniform(0, 2 * math.pi, k)
    speckles = _spots(dx, dy, rho * np.cos(phi), rho * np.sin(phi), 0.7 * effect.mito_size)
    paint[4] += PAINT_LEVELS["Mito"] * np.clip(speckles, 0, 1.5) * cytoplasm

    optics["body"] += cytoplasm
    optics["rim"] += effect.rim_gain * np.exp(-(((r - radius) / 1.0) ** 2))
    optics["nucleus"] += nucleus


def render(scene: SynthScene) -> StainStack:
    """Render a scene into raw brightfield and paint intensities.

    Brightfield shows cells as translucent discs with a bright rim over the
    illumination profile, with additive Gaussian noise. Paint noise is Poisson-like,
    its variance proportional to the intensity. Sensor noise depends only on
    ``scene.seed``, so a static scene renders identically at every frame.

    Args:
        scene (SynthScene): Scene to render.

    Returns:
        StainStack: Finite, non-negative float32 planes.
    """
    height, width = scene.height, scene.width
    yy, xx = np.meshgrid(
        np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij"
    )

    paint = np.zeros((len(Configs.paint_channels), height, width))
    optics = {name: np.zeros((height, width)) for name in ("body", "rim", "nucleus")}
    effect = scene.effect

    for cell in scene.cells:
        dx = _wrap(xx - cell.center[0], width)
        dy = _wrap(yy - cell.center[1], height)
        _draw_cell(cell, effect, dx, dy, paint, optics)

    illumination = scene.illumination
    modulation = (
        -0.10 * np.clip(optics["body"], 0, 1.5)
        + 0.30 * optics["rim"]
        - 0.06 * optics["nucleus"]
    )
    brightfield = illumination.as_array(height, width) * (
        1.0 + illumination.contrast * modulation
    )

    sigma = illumination.blur_sigma
    brightfield = gaussian_filter(brightfield, sigma=sigma, mode="wrap")
    paint = gaussian_filter(paint, sigma=(0, sigma, sigma), mode="wrap") + PAINT_BACKGROUND

    rng = np.random.default_rng(derive_seed(scene.seed, 0xB1))
    brightfield = brightfield + rng.normal(0.0, BRIGHTFIELD_NOISE * illumination.level, brightfield.shape)
    paint = paint + np.sqrt(paint) * rng.standard_normal(paint.shape)

    return StainStack(
        brightfield=np.clip(brightfield, 0.0, None).astype(np.float32),
        paint=np.clip(paint, 0.0, None).astype(np.float32),
    )
