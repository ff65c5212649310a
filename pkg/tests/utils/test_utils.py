"""Module with tests for utils methods."""

import logging
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest
import torch

from src.utils.errors import (
    ConfigError,
    DataFormatError,
    InvalidArgumentError,
    InvalidDataError,
    LeakageError,
    MonetLabError,
    NumericalError,
)
from src.utils.log import configure_logging
from src.utils.reports import plot_frame_curves, plot_scale_sweep, write_markdown_report
from src.utils.seeding import derive_seed, numpy_rng, torch_generator


@pytest.mark.parametrize(
    "error, code",
    [
        (InvalidArgumentError, 1),
        (ConfigError, 1),
        (DataFormatError, 2),
        (InvalidDataError, 2),
        (LeakageError, 2),
        (NumericalError, 3),
    ],
)
def test_error_exit_codes(error, code):
    """Test that every error family carries its exit code.

    Args:
        error: Error class.
        code: Expected exit code.
    """
    assert issubclass(error, MonetLabError)
    assert error.exit_code == code


def test_invalid_argument_is_a_value_error():
    """Argument errors can be caught as ValueError."""
    with pytest.raises(ValueError):
        raise InvalidArgumentError("bad")


def test_numerical_error_snapshot():
    """The snapshot defaults to an empty dict."""
    assert NumericalError("x").snapshot == {}
    assert NumericalError("x", {"step": 3}).snapshot == {"step": 3}


@pytest.mark.parametrize("name, level", [("error", logging.ERROR), ("DEBUG", logging.DEBUG), ("nonsense", logging.INFO)])
def test_configure_logging_levels(name, level):
    """Test explicit levels, case folding and the fallback for unknown names.

    Args:
        name: Requested level.
        level: Expected numeric level.
    """
    assert configure_logging(name) == level
    assert logging.getLogger().level == level


def test_configure_logging_reads_environment(monkeypatch):
    """Test that MONETLAB_LOG applies when no level is given.

    Args:
        monkeypatch: Pytest monkeypatch fixture.
    """
    monkeypatch.setenv("MONETLAB_LOG", "error")
    with patch("src.utils.log.load_dotenv"):
        assert configure_logging() == logging.ERROR


def test_derived_seeds_are_independent_streams():
    """Same path, same seed; any change in the path gives another."""
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    seeds = {derive_seed(1, 2, 3), derive_seed(1, 2, 4), derive_seed(1, 3, 2), derive_seed(2, 2, 3), derive_seed(1)}
    assert len(seeds) == 5
    assert 0 <= derive_seed(-1, 0) < 2**64


def test_generators_replay():
    """Numpy and torch generators on one stream replay their draws."""
    np.testing.assert_array_equal(numpy_rng(5, 1).normal(size=4), numpy_rng(5, 1).normal(size=4))
    a = torch.randn(4, generator=torch_generator(5, 1))
    assert torch.equal(a, torch.randn(4, generator=torch_generator(5, 1)))
    assert not torch.equal(a, torch.randn(4, generator=torch_generator(5, 2)))


def test_markdown_report(tmp_path):
    """Test that tables, figures and notes are written in order.

    Args:
        tmp_path: Temporary directory.
    """
    path = write_markdown_report(
        tmp_path / "report.md",
        "Report",
        {"Scores": pd.DataFrame({"fd": {"S": 1.25}})},
        figures={"Curve": "curve.png"},
        notes=["seed 0"],
    )
    text = path.read_text()
    assert text.startswith("# Report")
    assert "![Curve](./curve.png)" in text
    assert "1.2500" in text
    assert text.index("## Scores") < text.index("- seed 0")


def test_report_write_failure(tmp_path):
    """Test that an unwritable destination is a data error.

    Args:
        tmp_path: Temporary directory.
    """
    with pytest.raises(DataFormatError):
        write_markdown_report(tmp_path / "missing" / "report.md", "Report", {})


def test_plots_are_written(tmp_path):
    """Test that the sweep and frame-curve figures are saved.

    Args:
        tmp_path: Temporary directory.
    """
    sweep = pd.DataFrame({"tier": ["S", "M"], "params": [1e5, 4e5], "fd": [2.0, 1.0], "auc_ratio": [0.8, 0.9]})
    plot_scale_sweep(sweep, tmp_path / "sweep.png")
    plot_frame_curves({"consistent": [0.1, 0.1], "independent": [0.3, 0.2]}, tmp_path / "curves.png")
    assert (tmp_path / "sweep.png").stat().st_size > 0
    assert (tmp_path / "curves.png").stat().st_size > 0
