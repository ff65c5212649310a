"""Shared fixtures: a tiny on-disk dataset and a tiny network shape."""

import pytest

from src.configs import AugmentConfig, DatasetConfig, TrainConfig
from src.ml_pipelines.percentiles import compute_dataset_stats
from src.model.unet import ModelConfig
from src.store.dataset_store.file_store import STATS, FileDatasetStore
from src.synthdata.dataset import build_dataset

TINY_DATASET = DatasetConfig(
    seed=3,
    height=16,
    width=16,
    n_classes=2,
    n_train=8,
    n_test=4,
    min_cells=1,
    max_cells=3,
    n_sequences=2,
    sequence_length=3,
)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Build a 16x16 two-class dataset with stats.json, once per session."""
    root = tmp_path_factory.mktemp("data") / "base"
    build_dataset(TINY_DATASET, root)
    store = FileDatasetStore(root).connect()
    store.write_document(STATS, compute_dataset_stats(store).to_dict())
    return root


@pytest.fixture
def tiny_model_config():
    """Smallest network shape that satisfies the width constraints."""
    return ModelConfig(base_width=4, attention_heads=2, group_count=2)


@pytest.fixture
def tiny_train_config(tiny_dataset, tmp_path):
    """Four-step training run on the tiny dataset."""
    return TrainConfig(
        steps=4,
        batch_size=2,
        seed=5,
        dataset=str(tiny_dataset),
        checkpoint_dir=str(tmp_path / "run"),
        checkpoint_every=2,
        dump_every=1000,
        log_every=1,
        val_examples=2,
        augment=AugmentConfig(crop_size=8),
    )
