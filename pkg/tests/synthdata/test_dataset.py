"""Module to test dataset building."""

import numpy as np
import pytest

from src.configs import DatasetConfig, Domain
from src.store.dataset_store.file_store import FileDatasetStore
from src.synthdata.dataset import (
    build_dataset,
    build_timelapse_corpus,
    check_smoothness,
    plan_scenes,
    relative_frame_delta,
    stratified_labels,
)
from src.utils.errors import InvalidDataError

SMALL = DatasetConfig(
    seed=1, height=16, width=16, n_classes=2, n_train=10, n_test=2, min_cells=1, max_cells=3, n_sequences=0
)


def _tree_bytes(root):
    return {
        str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()
    }


def test_stratified_labels_are_balanced():
    """Every class count is within one of n / n_classes."""
    labels = stratified_labels(4000, 6, np.random.default_rng(0))
    counts = np.bincount(labels, minlength=6)
    assert np.all(np.abs(counts - 4000 / 6) <= 1)


def test_small_dataset_layout(tmp_path):
    """Test that ten training scenes split five and five over two classes.

    Args:
        tmp_path: Temporary directory.
    """
    root = build_dataset(SMALL, tmp_path / "ds")
    df = FileDatasetStore(root).connect().fetch_to_dataframe()

    train = df.loc[df["split"] == "train"]
    assert len(train) == 10
    assert train["class"].value_counts().to_dict() == {0: 5, 1: 5}
    assert len(list((root / "scenes").iterdir())) == 12


def test_rebuild_is_byte_identical(tmp_path):
    """Test that the same config and seed rebuild the same bytes.

    Args:
        tmp_path: Temporary directory.
    """
    first = build_dataset(SMALL, tmp_path / "a")
    second = build_dataset(SMALL, tmp_path / "b", n_jobs=2)
    assert _tree_bytes(first) == _tree_bytes(second)


def test_domains_share_labels_not_seeds():
    """Shifted scenes get their own seeds."""
    base = plan_scenes(SMALL)
    shifted = plan_scenes(SMALL.model_copy(update={"domain": Domain.shifted}))
    assert {e["seed"] for e in base}.isdisjoint({e["seed"] for e in shifted})


def test_timelapse_corpus(tiny_dataset):
    """Test that sequences are written with consecutive frames sharing a class.

    Args:
        tiny_dataset: Session dataset with two sequences.
    """
    store = FileDatasetStore(tiny_dataset).connect()
    sequences = store.read_document("timelapse_manifest.json")["sequences"]
    assert [s["sequence_id"] for s in sequences] == ["seq000", "seq001"]

    frames = sequences[0]["frames"]
    metas = [store.read_scene(f)[1] for f in frames]
    assert [m["frame_index"] for m in metas] == [0, 1, 2]
    assert len({m["class"] for m in metas}) == 1


def test_relative_frame_delta_arithmetic():
    """A frame of ones followed by a frame of 1.5 changes by half its level."""
    assert relative_frame_delta(np.ones((6, 4, 4)), np.full((6, 4, 4), 1.5)) == pytest.approx(0.5)
    assert relative_frame_delta(np.ones((6, 4, 4)), np.ones((6, 4, 4))) == 0.0


def test_sequences_respect_smoothness_bound(tiny_dataset):
    """Test that recorded mean frame deltas match the frames and sit within the bound.

    Args:
        tiny_dataset: Session dataset with two sequences.
    """
    store = FileDatasetStore(tiny_dataset).connect()
    for sequence in store.read_document("timelapse_manifest.json")["sequences"]:
        planes = [store.read_scene(f)[0].planes() for f in sequence["frames"]]
        deltas = [relative_frame_delta(a, b) for a, b in zip(planes, planes[1:])]
        assert sequence["mean_frame_delta"] == pytest.approx(np.mean(deltas), rel=1e-6)
        assert sequence["mean_frame_delta"] <= DatasetConfig().max_relative_frame_delta


def test_fast_sequence_is_rejected(tmp_path):
    """Test that a bound below the rendered change aborts the timelapse build.

    Args:
        tmp_path: Temporary directory.
    """
    config = SMALL.model_copy(
        update={"n_sequences": 1, "sequence_length": 3, "max_relative_frame_delta": 1e-9}
    )
    with pytest.raises(InvalidDataError, match="seq000"):
        build_timelapse_corpus(config, tmp_path / "ds")


def test_check_smoothness():
    """Single-frame sequences pass and the mean is compared to the bound."""
    assert check_smoothness("s", [], 0.1) == 0.0
    assert check_smoothness("s", [0.1, 0.3], 0.2) == pytest.approx(0.2)
    with pytest.raises(InvalidDataError):
        check_smoothness("s", [0.1, 0.4], 0.2)
