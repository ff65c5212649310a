"""Module to test the CLI."""

import json
from unittest.mock import patch

import numpy as np
import pytest
from typer.testing import CliRunner

from src.cli.main import app, cli_main
from src.configs import Tier
from src.eval.protocols import MetricsReport
from src.model.unet import init_params
from src.store.checkpoint import save_checkpoint
from src.store.tensor_file import write_tensor
from src.utils.errors import DataFormatError, NumericalError

runner = CliRunner()


@pytest.fixture(autouse=True)
def mock_set_threads():
    """Fixture to keep the CLI from changing global torch threading in tests."""
    with patch("src.cli.main.set_threads") as mock_threads:
        yield mock_threads


@pytest.fixture
def mock_build_dataset():
    """Fixture to mock the build_dataset function in the main CLI module."""
    with patch("src.cli.main.build_dataset") as mock_build:
        yield mock_build


@pytest.fixture
def mock_train_model():
    """Fixture to mock the train function in the train module."""
    with patch("src.ml_core.train.train") as mock_train:
        yield mock_train


@pytest.fixture
def mock_fd_protocol():
    """Fixture to mock the Fréchet distance protocol."""
    with patch("src.eval.protocols.fd_protocol") as mock_fd:
        mock_fd.return_value = MetricsReport("fd", frechet={"trained": 1.0, "untrained": 2.0})
        yield mock_fd


def test_synth_command(mock_build_dataset, tmp_path):
    """Test the 'synth' CLI command builds the base and the shifted dataset.

    Args:
        mock_build_dataset: Mocked build_dataset function.
        tmp_path: Temporary directory.
    """
    result = runner.invoke(app, ["synth", "--out", str(tmp_path), "--seed", "4"])

    assert result.exit_code == 0, result.output
    assert mock_build_dataset.call_count == 2
    base_call, shifted_call = mock_build_dataset.call_args_list
    assert base_call.args[0].seed == 4
    assert base_call.args[1] == tmp_path / "base"
    assert shifted_call.args[0].domain.value == "shifted"
    assert shifted_call.args[1] == tmp_path / "shifted"


def test_synth_command_without_shifted(mock_build_dataset, tmp_path):
    """Test that --no-shifted builds only the base dataset.

    Args:
        mock_build_dataset: Mocked build_dataset function.
        tmp_path: Temporary directory.
    """
    result = runner.invoke(app, ["synth", "--out", str(tmp_path), "--no-shifted"])
    assert result.exit_code == 0
    mock_build_dataset.assert_called_once()


def test_train_command(mock_train_model, tmp_path):
    """Test the 'train' CLI command passes tier, steps and output through.

    Args:
        mock_train_model: Mocked train function.
        tmp_path: Temporary directory.
    """
    mock_train_model.return_value = tmp_path
    result = runner.invoke(
        app,
        ["train", "--tier", "M", "--train-steps", "7", "--steps", "3", "--out", str(tmp_path)],
    )

    assert result.exit_code == 0, result.output
    mock_train_model.assert_called_once()
    train_config = mock_train_model.call_args.args[0]
    assert train_config.tier is Tier.M
    assert train_config.steps == 7
    assert train_config.checkpoint_dir == str(tmp_path)
    assert mock_train_model.call_args.kwargs["sample_steps"] == 3
    assert mock_train_model.call_args.kwargs["resume"] is False


def test_eval_fd_command(mock_fd_protocol, tmp_path):
    """Test the 'eval-fd' CLI command prints the distances.

    Args:
        mock_fd_protocol: Mocked protocol.
        tmp_path: Temporary directory.
    """
    result = runner.invoke(app, ["eval-fd", "--checkpoint", "ckpt", "--out", str(tmp_path), "--steps", "5"])

    assert result.exit_code == 0, result.output
    assert '"trained": 1.0' in result.output
    args = mock_fd_protocol.call_args.args
    assert args[1] == "ckpt" and args[4] == 5


@pytest.mark.parametrize(
    "error, code",
    [(DataFormatError("bad file"), 2), (NumericalError("diverged"), 3)],
)
def test_exit_codes_follow_error_family(mock_fd_protocol, error, code):
    """Test that library errors map to their exit codes.

    Args:
        mock_fd_protocol: Mocked protocol.
        error: Raised error.
        code: Expected exit code.
    """
    mock_fd_protocol.side_effect = error
    assert cli_main(["eval-fd", "--checkpoint", "ckpt"]) == code


def test_exit_code_success_and_usage(mock_fd_protocol, tmp_path):
    """Test success, unknown commands, malformed flags and unreadable configs.

    Args:
        mock_fd_protocol: Mocked protocol.
        tmp_path: Temporary directory.
    """
    assert cli_main(["eval-fd", "--checkpoint", "ckpt"]) == 0
    assert cli_main(["paint-everything"]) == 1
    assert cli_main(["eval-moa", "--checkpoint", "no-equals-sign"]) == 1
    assert cli_main(["eval-fd", "--config", str(tmp_path / "missing.json")]) == 1

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"steps": -1}}))
    assert cli_main(["eval-fd", "--config", str(bad)]) == 1


def test_timelapse_command(tiny_dataset, tiny_model_config, tmp_path):
    """Test the 'timelapse' CLI command exports frames and a consistency row.

    Args:
        tiny_dataset: Session dataset.
        tiny_model_config: Tiny network shape.
        tmp_path: Temporary directory.
    """
    checkpoint = save_checkpoint(tmp_path / "ckpt", init_params(tiny_model_config, 0))
    out = tmp_path / "tl"
    result = runner.invoke(
        app,
        [
            "timelapse",
            "--checkpoint", str(checkpoint),
            "--dataset", str(tiny_dataset),
            "--sequence", "seq001",
            "--mode", "independent",
            "--steps", "2",
            "--out", str(out),
        ],
    )

    assert result.exit_code == 0, result.output
    index = json.loads((out / "seq001_independent" / "index.json").read_text())
    assert len(index["frames"]) == 3
    assert "seq001,independent" in (out / "consistency.csv").read_text()


def test_render_command(tmp_path):
    """Test the 'render' CLI command turns a paint tensor into a PNG.

    Args:
        tmp_path: Temporary directory.
    """
    source = tmp_path / "paint.mst"
    write_tensor(source, np.zeros((5, 4, 4), dtype=np.float32))
    result = runner.invoke(app, ["render", str(source), "--out", str(tmp_path / "paint.png")])

    assert result.exit_code == 0, result.output
    assert (tmp_path / "paint.png").is_file()


@pytest.mark.parametrize(
    "command",
    ["synth", "stats", "train", "sample", "timelapse", "eval-moa", "eval-fd", "eval-consistency", "scale-sweep", "adapt", "render"],
)
def test_help_exits_cleanly(command):
    """Test that every subcommand documents its flags.

    Args:
        command: Subcommand name.
    """
    result = runner.invoke(app, [command, "--help"])
    assert result.exit_code == 0
    assert "--" in result.output
