"""Module to test the evaluation protocols and their helpers."""

import json
from collections import OrderedDict

import numpy as np
import pandas as pd
import pytest

from src.configs import EvalConfig, ProbeConfig, RunConfig, SamplerConfig
from src.eval.protocols import (
    GEN_STREAM,
    MetricsReport,
    check_leakage,
    consistency_protocol,
    generate_paint,
    load_eval_images,
    moa_protocol,
    pixel_mse,
    reference_example,
    scale_sweep,
    write_consistency_rows,
)
from src.ml_core.diffusion import initial_noise
from src.ml_pipelines.percentiles import load_dataset_stats
from src.model.unet import init_params
from src.store.checkpoint import Checkpoint, save_checkpoint
from src.store.dataset_store.file_store import FileDatasetStore
from src.utils.errors import ConfigError, LeakageError
from src.utils.seeding import torch_generator


@pytest.fixture
def run_config():
    """Fast protocol settings for the tiny dataset."""
    return RunConfig(
        sampler=SamplerConfig(steps=2, batch_size=4),
        probe=ProbeConfig(folds=2, epochs=1, batch_size=4, width=4),
        eval=EvalConfig(extractor="handcrafted"),
    )


@pytest.fixture
def zero_checkpoint(tiny_model_config, tmp_path):
    """Untrained (zero-output) network saved as a checkpoint."""
    return save_checkpoint(tmp_path / "ckpt", init_params(tiny_model_config, 0))


def test_pixel_mse_per_channel():
    """Channel errors are reported by name; generated values are clamped first."""
    truth = np.zeros((2, 5, 3, 3))
    generated = truth.copy()
    generated[:, 0] = 0.5
    generated[:, 4] = 4.0
    result = pixel_mse(generated, truth)
    assert result["DNA"] == pytest.approx(0.25)
    assert result["Mito"] == pytest.approx(1.0)
    assert result["RNA"] == 0.0
    assert result["mean"] == pytest.approx(0.25)


def test_leakage_is_detected(tiny_model_config, tiny_dataset):
    """Test that an evaluation id among the training ids of the same dataset aborts.

    Args:
        tiny_model_config: Tiny network shape.
        tiny_dataset: Session dataset.
    """
    checkpoint = Checkpoint(tiny_model_config, OrderedDict(), {"train_ids": ["a", "b"], "dataset": str(tiny_dataset)})
    check_leakage(checkpoint, ["c"], tiny_dataset)
    with pytest.raises(LeakageError):
        check_leakage(checkpoint, ["b", "c"], tiny_dataset)

    elsewhere = Checkpoint(tiny_model_config, OrderedDict(), {"train_ids": ["b"], "dataset": "/other/data"})
    check_leakage(elsewhere, ["b"], tiny_dataset)


def test_generate_paint_with_zero_model(tiny_model_config):
    """Test that a zero network returns each image's own noise stream.

    Args:
        tiny_model_config: Tiny network shape.
    """
    model = init_params(tiny_model_config, 0)
    planes = np.zeros((3, 6, 8, 8), dtype=np.float32)
    paint = generate_paint(model, planes, steps=2, seed=7, batch_size=2)
    assert paint.shape == (3, 5, 8, 8)
    for j in range(3):
        expected = initial_noise((5, 8, 8), torch_generator(7, GEN_STREAM, j)).numpy()
        np.testing.assert_array_equal(paint[j], expected)


def test_load_eval_images_and_reference(tiny_dataset):
    """Test that the test split loads normalized with labels and a training reference resolves.

    Args:
        tiny_dataset: Session dataset.
    """
    images = load_eval_images(tiny_dataset, "test", max_images=3)
    assert images.planes.shape == (3, 6, 16, 16)
    assert images.paint.shape == (3, 5, 16, 16) and images.brightfield.shape == (3, 1, 16, 16)
    assert images.planes.min() >= -1 and images.planes.max() <= 1

    stats = load_dataset_stats(FileDatasetStore(tiny_dataset).connect())
    planes, meta = reference_example(tiny_dataset, 0, stats)
    assert planes.shape == (6, 16, 16) and meta["id"]
    with pytest.raises(ConfigError):
        reference_example(tiny_dataset, 99, stats)


def test_consistency_rows_replace_older_entries(tmp_path):
    """Test that rows merge by (sequence_id, mode), the newest value winning.

    Args:
        tmp_path: Temporary directory.
    """
    path = tmp_path / "consistency.csv"
    write_consistency_rows(path, [{"sequence_id": "seq000", "mode": "consistent", "mean_mse": 0.5}])
    write_consistency_rows(
        path,
        [
            {"sequence_id": "seq000", "mode": "consistent", "mean_mse": 0.2},
            {"sequence_id": "seq000", "mode": "independent", "mean_mse": 0.4},
        ],
    )
    table = pd.read_csv(path)
    assert len(table) == 2
    assert table.set_index("mode").loc["consistent", "mean_mse"] == 0.2


def test_metrics_report_json(tmp_path):
    """Test that reports serialize with their provenance.

    Args:
        tmp_path: Temporary directory.
    """
    report = MetricsReport("fd", frechet={"trained": 1.5}, provenance={"seeds": {"sampler": 3}})
    document = json.loads(report.write_json(tmp_path / "r.json").read_text())
    assert document["protocol"] == "fd"
    assert document["frechet"] == {"trained": 1.5}
    assert document["provenance"]["seeds"]["sampler"] == 3


def test_moa_protocol_without_generators(tiny_dataset, run_config, tmp_path):
    """Test that real paint and brightfield probes are reported with markdown and JSON.

    Args:
        tiny_dataset: Session dataset.
        run_config: Fast protocol settings.
        tmp_path: Temporary directory.
    """
    report = moa_protocol(tiny_dataset, {}, run_config, tmp_path / "moa", steps=2)
    assert set(report.auc) == {"brightfield", "real_paint"}
    assert set(report.auc["real_paint"]) == {0, 1}
    assert (tmp_path / "moa" / "moa_report.json").is_file()
    assert "Mean AUC" in (tmp_path / "moa" / "moa_report.md").read_text()


def test_scale_sweep_requires_every_tier(tiny_dataset, run_config, tmp_path):
    """Test that a sweep with missing tiers is a configuration error.

    Args:
        tiny_dataset: Session dataset.
        run_config: Fast protocol settings.
        tmp_path: Temporary directory.
    """
    with pytest.raises(ConfigError):
        scale_sweep(tiny_dataset, {"S": "x"}, run_config, tmp_path)


def test_consistency_protocol_with_zero_model(tiny_dataset, zero_checkpoint, run_config, tmp_path):
    """Test that with a zero network both modes coincide and every artifact is written.

    Args:
        tiny_dataset: Session dataset.
        zero_checkpoint: Untrained checkpoint.
        run_config: Fast protocol settings.
        tmp_path: Temporary directory.
    """
    out = tmp_path / "consistency"
    report = consistency_protocol(tiny_dataset, zero_checkpoint, run_config, out, steps=2)

    assert report.frame_mse["consistent"] == report.frame_mse["independent"]
    assert report.extra["gap"] == 0.0
    assert report.extra["gap_exceeds_3se"] is False
    assert report.extra["sequences"] == ["seq000", "seq001"]

    table = pd.read_csv(out / "consistency.csv")
    assert len(table) == 4
    for name in ("consistency.json", "consistency.md", "consistency.png"):
        assert (out / name).is_file()
