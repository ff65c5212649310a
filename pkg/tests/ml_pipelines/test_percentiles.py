"""Module to test percentile clip bounds."""

import numpy as np
import pytest

from src.configs import Configs
from src.ml_pipelines.percentiles import (
    PercentileStats,
    compute_percentiles,
    compute_stats,
    load_dataset_stats,
    nearest_rank,
)
from src.store.dataset_store.file_store import FileDatasetStore
from src.utils.errors import DataFormatError, InvalidArgumentError, InvalidDataError


@pytest.fixture
def hundred():
    """One 6x10x10 image whose every channel holds the values 1..100."""
    return np.tile(np.arange(1, 101, dtype=np.float64).reshape(1, 10, 10), (1, 6, 1, 1))


def test_paint_channel_uses_1_99(hundred):
    """Test the nearest-rank bounds of a paint channel.

    Args:
        hundred: Dataset with values 1..100.
    """
    assert compute_percentiles(hundred, 1) == (1.0, 99.0)


def test_brightfield_uses_2_98(hundred):
    """Test the nearest-rank bounds of the brightfield channel.

    Args:
        hundred: Dataset with values 1..100.
    """
    assert compute_percentiles(hundred, 0) == (2.0, 98.0)


def test_nearest_rank_matches_sort_oracle():
    """The selected value is the ceil(p n / 100)-th smallest."""
    values = np.random.default_rng(0).normal(size=12345)
    ordered = np.sort(values)
    for p in (1, 2, 50, 98, 99):
        rank = -(-p * values.size // 100)
        assert nearest_rank(values, p) == ordered[rank - 1]


def test_degenerate_channel():
    """A constant channel has lo == hi."""
    with pytest.raises(InvalidDataError, match="Degenerate"):
        compute_percentiles(np.ones((1, 6, 10, 10)), 2)


def test_too_few_pixels():
    """Fewer than 100 pooled pixels are rejected."""
    with pytest.raises(InvalidArgumentError):
        compute_percentiles(np.random.rand(1, 6, 5, 5), 0)


def test_stats_document_round_trip(hundred):
    """Test that stats serialize to the documented JSON form and back.

    Args:
        hundred: Dataset with values 1..100.
    """
    stats = compute_stats(hundred)
    document = stats.to_dict()

    assert document["method"] == "nearest-rank"
    assert document["DNA"] == [1.0, 99.0]
    assert document["brightfield"] == [2.0, 98.0]
    assert PercentileStats.from_dict(document) == stats


def test_stats_need_every_channel():
    """Missing channels make the document invalid."""
    with pytest.raises(DataFormatError):
        PercentileStats({"DNA": (0.0, 1.0)})


def test_dataset_stats_match_full_sort(tiny_dataset):
    """Test that stored DNA bounds equal a direct sort of all training pixels.

    Args:
        tiny_dataset: Session dataset.
    """
    store = FileDatasetStore(tiny_dataset).connect()
    stats = load_dataset_stats(store)

    df = store.fetch_to_dataframe()
    raw = store.read_stacks(df.loc[df["split"] == "train", "id"].tolist())
    dna = np.sort(raw[:, 1].ravel())
    lo_rank, hi_rank = -(-1 * dna.size // 100), -(-99 * dna.size // 100)

    assert stats.bounds["DNA"] == (float(dna[lo_rank - 1]), float(dna[hi_rank - 1]))
    assert set(stats.bounds) == set(Configs.channels)
