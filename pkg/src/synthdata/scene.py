"""Module with the latent synthetic scene model: cells, illumination and their motion."""

import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Tuple

import numpy as np

from src.configs import Domain
from src.utils.errors import InvalidArgumentError
from src.utils.seeding import derive_seed, numpy_rng

logger = logging.getLogger(__name__)

DEFAULT_CLASSES = 6
# Canvas side the geometry constants below are tuned for.
REFERENCE_SIDE = 64.0
DIVISION_RADIUS = 9.5
SHIFTED_BLUR_FACTOR = 1.6
SHIFTED_CONTRAST = 0.8
SHIFTED_TILT = (0.35, -0.2)


class Ellipse(NamedTuple):
    """Nucleus outline: semi-axes in pixels and orientation in radians."""

    a: float
    b: float
    angle: float


@dataclass(frozen=True)
class PerturbationEffect:
    """Morphology changes a perturbation class applies to every cell.

    Geometry factors act on the latent cells and are visible in brightfield;
    the remaining factors only change how paint channels are drawn.
    """

    name: str
    cytoplasm_scale: float = 1.0
    nucleus_scale: float = 1.0
    rim_gain: float = 1.0
    dna_gain: float = 1.0
    dna_granularity: float = 0.0
    er_gain: float = 1.0
    er_width: float = 1.0
    filament_gain: float = 1.0
    mito_density: float = 1.0
    mito_size: float = 1.0


# Ordered from strongly brightfield-visible to paint-only.
PERTURBATION_EFFECTS = (
    PerturbationEffect("control"),
    PerturbationEffect(
        "cytoskeletal_collapse", cytoplasm_scale=0.65, rim_gain=1.8, filament_gain=0.0
    ),
    PerturbationEffect(
        "mitotic_arrest", cytoplasm_scale=1.15, nucleus_scale=1.35, dna_gain=1.3
    ),
    PerturbationEffect("mito_fragmentation", mito_density=2.5, mito_size=0.6),
    PerturbationEffect("er_stress", er_gain=1.8, er_width=1.6),
    PerturbationEffect("chromatin_remodeling", dna_gain=1.6, dna_granularity=0.8),
)


def effect_for(perturbation_class: int) -> PerturbationEffect:
    """Return the effect of a class; classes past the table reuse it cyclically."""
    return PERTURBATION_EFFECTS[perturbation_class % len(PERTURBATION_EFFECTS)]


@dataclass(frozen=True)
class Cell:
    """One synthetic cell.

    Attributes:
        center (tuple): (x, y) position in pixels.
        velocity (tuple): (dx, dy) displacement per frame in pixels.
        nucleus (Ellipse): Nucleus outline relative to the center.
        cytoplasm_radius (float): Radius of the cytoplasm disc in pixels.
        organelle_seeds (tuple): One texture seed per paint channel.
        growth_rate (float): Relative size increase per frame.
    """

    center: Tuple[float, float]
    velocity: Tuple[float, float]
    nucleus: Ellipse
    cytoplasm_radius: float
    organelle_seeds: Tuple[int, int, int, int, int]
    growth_rate: float

    def __post_init__(self) -> None:
        """Check the geometric invariants."""
        a, b, _ = self.nucleus
        if min(a, b, self.cytoplasm_radius) <= 0:
            raise InvalidArgumentError("Cell sizes must be positive")
        if max(a, b) >= self.cytoplasm_radius:
            raise InvalidArgumentError("Nucleus must lie inside the cytoplasm disc")


@dataclass(frozen=True)
class IlluminationField:
    """Smooth brightfield illumination profile and optics of one domain.

    Attributes:
        domain (Domain): Imaging domain the profile belongs to.
        level (float): Mean raw brightfield intensity.
        center (tuple): Vignette center offset as a fraction of the canvas.
        falloff (float): Vignette strength.
        tilt (tuple): Linear gradient across the canvas along x and y.
        blur_sigma (float): Point spread width in pixels applied to every plane.
        contrast (float): Gain on the cell-induced brightfield modulation.
    """

    domain: Domain
    level: float
    center: Tuple[float, float]
    falloff: float
    tilt: Tuple[float, float]
    blur_sigma: float
    contrast: float

    def as_array(self, height: int, width: int) -> np.ndarray:
        """Evaluate the profile on a height x width grid.

        Args:
            height (int): Canvas height.
            width (int): Canvas width.

        Returns:
            np.ndarray: Positive float64 plane.
        """
        y = (np.arange(height) + 0.5) / height - 0.5
        x = (np.arange(width) + 0.5) / width - 0.5
        yy, xx = np.meshgrid(y, x, indexing="ij")

        r2 = (xx - self.center[0]) ** 2 + (yy - self.center[1]) ** 2
        vignette = 1.0 - 2.0 * self.falloff * r2
        gradient = 1.0 + self.tilt[0] * xx + self.tilt[1] * yy
        return self.level * vignette * gradient


@dataclass(frozen=True)
class SynthScene:
    """Latent description of one field of view at one point in time.

    Attributes:
        seed (int): Seed the scene was generated from; also drives sensor noise.
        cells (tuple): Cells in the field of view.
        illumination (IlluminationField): Illumination and optics.
        domain (Domain): Imaging domain.
        perturbation_class (int): Class label in [0, n_classes).
        frame_index (int): Number of advances since generation.
        height (int): Canvas height in pixels.
        width (int): Canvas width in pixels.
        n_classes (int): Configured class count.
    """

    seed: int
    cells: Tuple[Cell, ...]
    illumination: IlluminationField
    domain: Domain
    perturbation_class: int
    frame_index: int = 0
    height: int = 64
    width: int = 64
    n_classes: int = DEFAULT_CLASSES

    def __post_init__(self) -> None:
        """Check the label and frame invariants."""
        if not 0 <= self.perturbation_class < self.n_classes:
            raise InvalidArgumentError(
                f"perturbation_class {self.perturbation_class} outside [0, {self.n_classes})"
            )
        if self.frame_index < 0:
            raise InvalidArgumentError("frame_index must be non-negative")

    @property
    def effect(self) -> PerturbationEffect:
        """Morphology effect of the scene's class."""
        return effect_for(self.perturbation_class)


def make_illumination(rng_seed: int, domain: Domain, scale: float = 1.0) -> IlluminationField:
    """Draw the illumination of a scene; both domains share the random draws.

    Args:
        rng_seed (int): Scene seed.
        domain (Domain): Imaging domain.
        scale (float, optional): Canvas side relative to 64 pixels. Defaults to 1.0.

    Returns:
        IlluminationField: The illumination profile.
    """
    rng = numpy_rng(rng_seed, 0x11)
    center = tuple(float(v) for v in rng.uniform(-0.15, 0.15, size=2))
    falloff = float(rng.uniform(0.15, 0.3))
    level = float(rng.uniform(900.0, 1100.0))
    blur = 0.8 * scale

    if Domain(domain) == Domain.shifted:
        return IlluminationField(
            domain=Domain.shifted,
            level=level,
            center=center,
            falloff=falloff,
            tilt=SHIFTED_TILT,
            blur_sigma=blur * SHIFTED_BLUR_FACTOR,
            contrast=SHIFTED_CONTRAST,
        )

    return IlluminationField(
        domain=Domain.base,
        level=level,
        center=center,
        falloff=falloff,
        tilt=(0.0, 0.0),
        blur_sigma=blur,
        contrast=1.0,
    )


def gen_scene(
    rng_seed: int,
    perturbation_class: int,
    domain: Domain = Domain.base,
    height: int = 64,
    width: int = 64,
    n_classes: int = DEFAULT_CLASSES,
    min_cells: int = 4,
    max_cells: int = 20,
    max_speed: float = 0.6,
) -> SynthScene:
    """Generate a synthetic scene, deterministically in ``rng_seed``.

    Args:
        rng_seed (int): 64-bit seed.
        perturbation_class (int): Class label in [0, n_classes).
        domain (Domain, optional): Imaging domain. Defaults to base.
        height (int, optional): Canvas height. Defaults to 64.
        width (int, optional): Canvas width. Defaults to 64.
        n_classes (int, optional): Configured class count. Defaults to 6.
        min_cells (int, optional): Fewest cells. Defaults to 4.
        max_cells (int, optional): Most cells. Defaults to 20.
        max_speed (float, optional): Largest initial speed in pixels per frame. Defaults to 0.6.

    Raises:
        InvalidArgumentError: If the class is out of range.

    Returns:
        SynthScene: The scene at frame 0.
    """
    if not 0 <= perturbation_class < n_classes:
        raise InvalidArgumentError(
            f"perturbation_class {perturbation_class} outside [0, {n_classes})"
        )

    rng = np.random.default_rng(int(rng_seed) & 0xFFFFFFFFFFFFFFFF)
    scale = min(height, width) / REFERENCE_SIDE
    effect = effect_for(perturbation_class)

    cells = []
    for _ in range(int(rng.integers(min_cells, max_cells + 1))):
        x, y = rng.uniform(0, width), rng.uniform(0, height)
        speed, heading = rng.uniform(0, max_speed), rng.uniform(0, 2 * math.pi)
        radius = rng.uniform(5.5, 8.0) * scale * effect.cytoplasm_scale
        a = rng.uniform(0.4, 0.55) * rng.uniform(5.5, 8.0) * scale
        b = a * rng.uniform(0.7, 1.0)
        angle = rng.uniform(0, math.pi)
        seeds = tuple(int(s) for s in rng.integers(0, 2**63 - 1, size=5))
        growth = rng.uniform(0.0005, 0.003)

        a, b = a * effect.nucleus_scale, b * effect.nucleus_scale
        # keep the nucleus inside the cytoplasm whatever the class does
        shrink = min(1.0, 0.8 * radius / max(a, b))

        cells.append(
            Cell(
                center=(float(x), float(y)),
                velocity=(float(speed * math.cos(heading)), float(speed * math.sin(heading))),
                nucleus=Ellipse(float(a * shrink), float(b * shrink), float(angle)),
                cytoplasm_radius=float(radius),
                organelle_seeds=seeds,
                growth_rate=float(growth),
            )
        )

    return SynthScene(
        seed=int(rng_seed),
        cells=tuple(cells),
        illumination=make_illumination(rng_seed, domain, scale),
        domain=Domain(domain),
        perturbation_class=perturbation_class,
        height=height,
        width=width,
        n_classes=n_classes,
    )


def _divide(cell: Cell, offset: float) -> Tuple[Cell, Cell]:
    """Split a cell into two daughters placed ``offset`` pixels either side of it."""
    factor = 1.0 / math.sqrt(2.0)
    a, b, angle = cell.nucleus
    ox, oy = offset * math.cos(angle), offset * math.sin(angle)

    daughters = []
    for sign, branch in ((1.0, 1), (-1.0, 2)):
        daughters.append(
            replace(
                cell,
                center=(cell.center[0] + sign * ox, cell.center[1] + sign * oy),
                nucleus=Ellipse(a * factor, b * factor, angle),
                cytoplasm_radius=cell.cytoplasm_radius * factor,
                organelle_seeds=tuple(derive_seed(s, branch) for s in cell.organelle_seeds),
            )
        )
    return daughters[0], daughters[1]


def advance(
    scene: SynthScene, max_step_px: float = 3.0, max_cells: int = 40
) -> SynthScene:
    """Move the scene one frame forward in time.

    Cells drift along a slowly turning heading, grow, wrap around the canvas edges
    and divide once they pass the division radius. No cell moves more than
    ``max_step_px`` pixels per frame.

    Args:
        scene (SynthScene): Current frame.
        max_step_px (float, optional): Largest per-frame displacement. Defaults to 3.0.
        max_cells (int, optional): Population cap; beyond it cells stop dividing. Defaults to 40.

    Returns:
        SynthScene: The next frame.
    """
    rng = numpy_rng(scene.seed, 0xAD, scene.frame_index)
    scale = min(scene.height, scene.width) / REFERENCE_SIDE
    division_radius = DIVISION_RADIUS * scale

    cells = []
    population = len(scene.cells)
    for cell in scene.cells:
        turn = rng.normal(0.0, 0.15)
        vx, vy = cell.velocity
        vx, vy = (
            vx * math.cos(turn) - vy * math.sin(turn),
            vx * math.sin(turn) + vy * math.cos(turn),
        )
        speed = math.hypot(vx, vy)
        if speed > max_step_px:
            vx, vy = vx * max_step_px / speed, vy * max_step_px / speed

        growth = 1.0 + cell.growth_rate
        a, b, angle = cell.nucleus
        radius = cell.cytoplasm_radius * growth
        divides = radius > division_radius and population < max_cells

        # daughter offset plus the move stays within max_step_px
        offset = min(radius / 2.0, max_step_px / 2.0) if divides else 0.0
        step_x, step_y = vx, vy
        room = max_step_px - offset
        speed = math.hypot(vx, vy)
        if speed > room:
            step_x, step_y = vx * room / speed, vy * room / speed

        grown = replace(
            cell,
            center=((cell.center[0] + step_x) % scene.width, (cell.center[1] + step_y) % scene.height),
            velocity=(vx, vy),
            nucleus=Ellipse(a * growth, b * growth, angle),
            cytoplasm_radius=radius,
        )

        if radius <= division_radius:
            cells.append(grown)
        elif divides:
            population += 1
            cells.extend(_divide(grown, offset))
        else:
            # population cap reached: the cell keeps moving but stops growing
            cells.append(replace(grown, nucleus=cell.nucleus, cytoplasm_radius=cell.cytoplasm_radius))

    wrapped = tuple(
        replace(c, center=(c.center[0] % scene.width, c.center[1] % scene.height))
        for c in cells
    )
    return replace(scene, cells=wrapped, frame_index=scene.frame_index + 1)
