"""Module to test RGB compositing."""

import numpy as np
import pytest

from src.eval.rgb import render_brightfield, render_rgb
from src.utils.errors import InvalidArgumentError


def test_all_off_is_black():
    """Every channel at -1 renders black."""
    assert np.all(render_rgb(-np.ones((5, 2, 2))) == 0.0)


def test_dna_only_is_blue():
    """DNA alone at +1 renders pure blue."""
    paint = -np.ones((5, 2, 2))
    paint[0] = 1.0
    rgb = render_rgb(paint)
    assert np.all(rgb[2] == 1.0) and np.all(rgb[:2] == 0.0)


def test_all_on_clamps_to_white():
    """Sums above one are clamped."""
    assert np.all(render_rgb(np.ones((5, 3, 3))) == 1.0)


def test_out_of_range_values_are_clipped():
    """Values beyond [-1, 1] behave like the bounds."""
    np.testing.assert_array_equal(render_rgb(np.full((5, 2, 2), 5.0)), render_rgb(np.ones((5, 2, 2))))


def test_shapes():
    """Paint must be 5xHxW; brightfield becomes a grey 3xHxW image."""
    with pytest.raises(InvalidArgumentError):
        render_rgb(np.zeros((3, 2, 2)))
    grey = render_brightfield(np.zeros((1, 4, 4)))
    assert grey.shape == (3, 4, 4) and np.all(grey == 0.5)
