"""Module with dataset-level percentile clip bounds."""

import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Tuple

import numpy as np

from src.configs import Configs
from src.store.dataset_store.file_store import STATS
from src.utils.errors import DataFormatError, InvalidArgumentError, InvalidDataError

MIN_PIXELS = 100
METHOD = "nearest-rank"

logger = logging.getLogger(__name__)


def nearest_rank(values: np.ndarray, p: float) -> float:
    """Return the nearest-rank percentile: the ceil(p/100 * n)-th smallest value.

    Args:
        values (np.ndarray): Pooled values, any shape.
        p (float): Percentile in (0, 100].

    Returns:
        float: The selected value.
    """
    values = np.ravel(values)
    n = values.size
    if n == 0:
        raise InvalidArgumentError("Cannot take a percentile of no values")

    # exact rational arithmetic: 0.99 * 100 must give rank 99, not 100
    rank = max(1, math.ceil(Fraction(str(p)) * n / 100))
    return float(np.partition(values, rank - 1)[rank - 1])


def percentiles_for(channel_index: int) -> Tuple[int, int]:
    """Clip percentiles of a channel: 2/98 for brightfield (index 0), 1/99 for paint."""
    return Configs.brightfield_percentiles if channel_index == 0 else Configs.paint_percentiles


def compute_percentiles(dataset, channel_index: int) -> Tuple[float, float]:
    """Pool every pixel of one channel across a dataset and return its clip bounds.

    Args:
        dataset: Nx6xHxW raw array (or a sequence of 6xHxW arrays), brightfield first.
        channel_index (int): 0 for brightfield, 1..5 for the paint channels.

    Raises:
        InvalidArgumentError: If the dataset is empty or the channel has under 100 pixels.
        InvalidDataError: If the two bounds coincide.

    Returns:
        tuple: (lo, hi) raw intensity bounds.
    """
    if len(dataset) == 0:
        raise InvalidArgumentError("Dataset is empty")

    pooled = np.concatenate([np.ravel(np.asarray(item)[channel_index]) for item in dataset])
    if pooled.size < MIN_PIXELS:
        raise InvalidArgumentError(
            f"Channel {channel_index} has {pooled.size} pixels, need at least {MIN_PIXELS}"
        )

    p_lo, p_hi = percentiles_for(channel_index)
    lo, hi = nearest_rank(pooled, p_lo), nearest_rank(pooled, p_hi)
    if lo == hi:
        raise InvalidDataError(
            f"Degenerate channel {Configs.channels[channel_index]}: lo == hi == {lo}"
        )
    return lo, hi


@dataclass
class PercentileStats:
    """Per-channel clip bounds of a dataset.

    Attributes:
        bounds (dict): Channel name to (lo, hi), for all six channels.
        method (str): Quantile method, always nearest-rank.
    """

    bounds: Dict[str, Tuple[float, float]]
    method: str = field(default=METHOD)

    def __post_init__(self) -> None:
        """Validate channel coverage and ordering of the bounds."""
        missing = set(Configs.channels) - set(self.bounds)
        if missing:
            raise DataFormatError(f"Percentile stats miss channels {sorted(missing)}")
        for name, (lo, hi) in self.bounds.items():
            if not lo < hi:
                raise InvalidDataError(f"Degenerate bounds for {name}: ({lo}, {hi})")

    @property
    def channel_count(self) -> int:
        """Number of channels covered."""
        return len(self.bounds)

    def arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        """Return (lo, hi) as float64 vectors in channel order."""
        lo = np.array([self.bounds[c][0] for c in Configs.channels], dtype=np.float64)
        hi = np.array([self.bounds[c][1] for c in Configs.channels], dtype=np.float64)
        return lo, hi

    def to_dict(self) -> dict:
        """Serialize as ``{channel: [lo, hi], ..., "method": "nearest-rank"}``."""
        document = {name: [float(lo), float(hi)] for name, (lo, hi) in self.bounds.items()}
        document["method"] = self.method
        return document

    @classmethod
    def from_dict(cls, document: dict) -> "PercentileStats":
        """Parse the JSON form written by ``to_dict``."""
        document = dict(document)
        method = document.pop("method", METHOD)
        if method != METHOD:
            raise DataFormatError(f"Unsupported percentile method {method!r}")
        return cls({k: (float(v[0]), float(v[1])) for k, v in document.items()}, method)

    def to_json(self) -> str:
        """Serialize to a JSON string."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def compute_stats(dataset) -> PercentileStats:
    """Compute clip bounds for all six channels of a raw dataset."""
    return PercentileStats(
        {name: compute_percentiles(dataset, i) for i, name in enumerate(Configs.channels)}
    )


def compute_dataset_stats(store, split: str = "train") -> PercentileStats:
    """Compute clip bounds over one split of a stored dataset.

    Args:
        store (FileDatasetStore): Connected dataset store.
        split (str, optional): Split to pool. Defaults to "train".

    Returns:
        PercentileStats: Bounds for all six channels.
    """
    df = store.fetch_to_dataframe()
    ids = df.loc[df["split"] == split, "id"].tolist()
    logger.info("Computing %s percentiles over %d %s scenes", METHOD, len(ids), split)
    return compute_stats(store.read_stacks(ids))


def load_dataset_stats(store) -> PercentileStats:
    """Read ``stats.json`` from a dataset, computing the bounds when it is absent."""
    if not (store.root / STATS).is_file():
        logger.warning("No %s in %s, computing percentiles from the train split", STATS, store.root)
        return compute_dataset_stats(store)
    return PercentileStats.from_dict(store.read_document(STATS))
