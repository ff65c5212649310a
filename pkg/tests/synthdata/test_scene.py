"""Module to test the latent scene model and the renderer."""

import math
from dataclasses import replace

import numpy as np
import pytest

from src.configs import Domain
from src.synthdata.render import PAINT_BACKGROUND, render
from src.synthdata.scene import Cell, Ellipse, advance, effect_for, gen_scene
from src.utils.errors import InvalidArgumentError


def test_gen_scene_is_deterministic():
    """The same seed and class give the same scene."""
    assert gen_scene(7, 0, Domain.base) == gen_scene(7, 0, Domain.base)


def test_different_seeds_give_different_scenes():
    """Neighbouring seeds almost always change the cell layout."""
    differ = sum(
        gen_scene(s, 0).cells != gen_scene(s + 1, 0).cells for s in range(100)
    )
    assert differ >= 95


def test_class_out_of_range():
    """Labels outside [0, n_classes) are rejected."""
    with pytest.raises(InvalidArgumentError):
        gen_scene(1, 6, n_classes=6)
    with pytest.raises(InvalidArgumentError):
        gen_scene(1, -1)


def test_cell_count_within_bounds():
    """Every scene draws between min_cells and max_cells cells."""
    counts = [len(gen_scene(s, 1, min_cells=2, max_cells=5).cells) for s in range(30)]
    assert min(counts) >= 2 and max(counts) <= 5


def test_classes_past_the_table_wrap():
    """Effects repeat cyclically for large class counts."""
    assert effect_for(7) == effect_for(1)


def test_render_is_bit_identical():
    """Rendering the same scene twice gives identical planes."""
    scene = gen_scene(7, 0)
    np.testing.assert_array_equal(render(scene).planes(), render(scene).planes())


def test_render_shapes_and_ranges():
    """Planes are finite, non-negative float32 of the canvas size."""
    stack = render(gen_scene(11, 3, height=32, width=48))
    assert stack.brightfield.shape == (32, 48)
    assert stack.paint.shape == (5, 32, 48)
    assert stack.planes().dtype == np.float32
    assert np.isfinite(stack.planes()).all() and stack.planes().min() >= 0


def test_empty_scene_paint_is_background():
    """With no cells every paint plane sits at the background level."""
    scene = replace(gen_scene(7, 0), cells=())
    paint = render(scene).paint
    np.testing.assert_allclose(paint.mean(axis=(1, 2)), PAINT_BACKGROUND, atol=0.5)


def test_single_cell_dna_peaks_in_nucleus():
    """The DNA maximum of a lone centered cell lies inside its nucleus."""
    cell = Cell(
        center=(32.0, 32.0),
        velocity=(0.0, 0.0),
        nucleus=Ellipse(4.0, 3.0, 0.0),
        cytoplasm_radius=7.0,
        organelle_seeds=(1, 2, 3, 4, 5),
        growth_rate=0.0,
    )
    scene = replace(gen_scene(7, 0), cells=(cell,))
    dna = render(scene).paint[0]

    y, x = np.unravel_index(np.argmax(dna), dna.shape)
    assert ((x - 32.0) / 4.0) ** 2 + ((y - 32.0) / 3.0) ** 2 <= 1.0


def test_static_scene_is_a_fixed_point():
    """With zero velocity and growth, advance only increments the frame index."""
    scene = gen_scene(7, 0)
    still = replace(
        scene,
        cells=tuple(replace(c, velocity=(0.0, 0.0), growth_rate=0.0) for c in scene.cells),
    )
    moved = advance(still)
    assert moved.frame_index == 1
    # turning a zero velocity keeps it zero
    np.testing.assert_array_equal(render(moved).planes(), render(still).planes())


def test_long_sequence_stays_valid():
    """Cells stay on the canvas and move at most max_step_px per frame over 200 frames."""
    scene = gen_scene(3, 2)
    for _ in range(200):
        scene = advance(scene, max_step_px=3.0, max_cells=40)
        for cell in scene.cells:
            assert 0 <= cell.center[0] < scene.width
            assert 0 <= cell.center[1] < scene.height
            assert math.hypot(*cell.velocity) <= 3.0 + 1e-9
        assert len(scene.cells) <= 40
    assert scene.frame_index == 200


def _wrapped_distance(p, q, width, height):
    dx = abs(p[0] - q[0]) % width
    dy = abs(p[1] - q[1]) % height
    return math.hypot(min(dx, width - dx), min(dy, height - dy))


@pytest.mark.parametrize("seed", [3, 11, 29])
def test_displacement_bounded_across_divisions(seed):
    """Test that every cell lies within max_step_px of a cell of the previous frame.

    Cells start at full speed and grow fast so divisions happen within a few frames.

    Args:
        seed (int): Scene seed.
    """
    scene = gen_scene(seed, 2)
    speed = 3.0
    scene = replace(
        scene,
        cells=tuple(
            replace(c, velocity=(speed, 0.0), growth_rate=0.05) for c in scene.cells
        ),
    )
    start = len(scene.cells)
    for _ in range(40):
        previous = scene
        scene = advance(previous, max_step_px=3.0, max_cells=40)
        for cell in scene.cells:
            nearest = min(
                _wrapped_distance(cell.center, p.center, scene.width, scene.height)
                for p in previous.cells
            )
            assert nearest <= 3.0 + 1e-9
    assert len(scene.cells) > start


def test_cell_rejects_nucleus_outside_cytoplasm():
    """A nucleus larger than its cytoplasm disc is invalid."""
    with pytest.raises(InvalidArgumentError):
        Cell((0.0, 0.0), (0.0, 0.0), Ellipse(5.0, 4.0, 0.0), 4.0, (1, 2, 3, 4, 5), 0.0)
