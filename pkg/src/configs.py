"""Module with configs of the project: constants, model tiers and run-config schema."""

import json
from enum import Enum
from pathlib import Path
from typing import Dict, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.utils.errors import ConfigError


class Configs:
    """Class to store all the fixed configurations of the project.

    Attributes:
        paint_channels (tuple): Paint channel names in storage order, DNA first.
        channels (tuple): Brightfield followed by the paint channels.
        channel_colors (dict): RGB colour of every paint channel in composites.
        paint_percentiles (tuple): Clip percentiles for paint channels.
        brightfield_percentiles (tuple): Clip percentiles for the brightfield channel.
        tiers (dict): Base width and default learning rate of every model tier.
        sample_steps (int): Reverse-process steps used for every generation.
    """

    paint_channels = ("DNA", "RNA", "ER", "AGP", "Mito")
    channels = ("brightfield",) + paint_channels

    channel_colors = {
        "DNA": (0.0, 0.0, 1.0),
        "RNA": (1.0, 0.0, 0.0),
        "ER": (1.0, 1.0, 0.0),
        "AGP": (0.0, 1.0, 1.0),
        "Mito": (0.0, 1.0, 0.0),
    }

    paint_percentiles = (1, 99)
    brightfield_percentiles = (2, 98)

    tiers = {
        "S": {"base_width": 16, "lr": 1e-3},
        "M": {"base_width": 32, "lr": 1e-3},
        "L": {"base_width": 48, "lr": 5e-4},
    }

    sample_steps = 50


class Tier(str, Enum):
    """Model width tiers of the scaling sweep."""

    S = "S"
    M = "M"
    L = "L"


class Domain(str, Enum):
    """Synthetic imaging domains."""

    base = "base"
    shifted = "shifted"


class _Strict(BaseModel):
    """Base model rejecting unknown keys."""

    model_config = ConfigDict(extra="forbid")


class DatasetConfig(_Strict):
    """Synthetic dataset generation settings."""

    seed: int = 0
    domain: Domain = Domain.base
    height: int = Field(64, ge=8)
    width: int = Field(64, ge=8)
    n_classes: int = Field(6, ge=1)
    n_train: int = Field(4000, ge=0)
    n_test: int = Field(800, ge=0)
    min_cells: int = Field(4, ge=0)
    max_cells: int = Field(20, ge=0)
    n_sequences: int = Field(10, ge=0)
    sequence_length: int = Field(200, ge=1)
    max_step_px: float = Field(3.0, gt=0)
    max_relative_frame_delta: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def check_cell_range(self) -> "DatasetConfig":
        """Reject an empty cell-count range."""
        if self.min_cells > self.max_cells:
            raise ValueError("min_cells must not exceed max_cells")
        return self


class AugmentConfig(_Strict):
    """Training-time augmentation settings."""

    crop_size: int = Field(48, ge=4)
    p_flip: float = Field(0.5, ge=0, le=1)
    p_zoom: float = Field(0.5, ge=0, le=1)
    zoom_range: Tuple[float, float] = (0.8, 1.25)
    p_random_crop: float = Field(0.5, ge=0, le=1)
    reference_dropout: float = Field(0.1, ge=0, le=1)


class TrainConfig(_Strict):
    """Generative model training settings."""

    tier: Tier = Tier.S
    lr: Optional[float] = Field(None, ge=0)
    batch_size: int = Field(16, ge=1)
    steps: int = Field(3000, ge=0)
    seed: int = 0
    dataset: str = "data/base"
    checkpoint_dir: str = "runs/train"
    checkpoint_every: int = Field(500, ge=1)
    dump_every: int = Field(500, ge=1)
    log_every: int = Field(50, ge=1)
    val_examples: int = Field(64, ge=1)
    grad_clip: float = Field(1.0, gt=0)
    attention_heads: int = Field(4, ge=1)
    group_count: int = Field(8, ge=1)
    augment: AugmentConfig = AugmentConfig()

    def resolved_lr(self) -> float:
        """Return the explicit learning rate or the tier default."""
        return self.lr if self.lr is not None else Configs.tiers[self.tier.value]["lr"]


class SamplerConfig(_Strict):
    """Reverse-process settings."""

    steps: int = Field(Configs.sample_steps, ge=1)
    seed: int = 0
    anchor: Literal["first", "previous"] = "first"
    batch_size: int = Field(32, ge=1)


class ProbeConfig(_Strict):
    """MOA-proxy probe classifier settings."""

    folds: int = Field(10, ge=2)
    epochs: int = Field(15, ge=1)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(2e-3, gt=0)
    width: int = Field(32, ge=1)
    seed: int = 0


class EvalConfig(_Strict):
    """Evaluation protocol settings."""

    checkpoints: Dict[str, str] = {}
    max_images: Optional[int] = Field(None, ge=1)
    max_frames: Optional[int] = Field(None, ge=2)
    fine_tune_steps: int = Field(500, ge=0)
    reference_index: int = Field(0, ge=0)
    extractor: Literal["probe", "handcrafted"] = "probe"
    out_dir: str = "runs/eval"


class RunConfig(_Strict):
    """Root run configuration document."""

    seed: int = 0
    threads: int = Field(1, ge=1)
    data_root: str = "data"
    dataset: DatasetConfig = DatasetConfig()
    shifted_dataset: DatasetConfig = DatasetConfig(
        domain=Domain.shifted, n_train=720, n_test=80, n_sequences=0
    )
    train: TrainConfig = TrainConfig()
    sampler: SamplerConfig = SamplerConfig()
    probe: ProbeConfig = ProbeConfig()
    eval: EvalConfig = EvalConfig()


def load_run_config(path: Optional[str] = None) -> RunConfig:
    """Load and validate a run configuration, defaults when no path is given.

    Args:
        path (str, optional): Path of a JSON document.

    Raises:
        ConfigError: If the file cannot be read or fails validation.

    Returns:
        RunConfig: The validated configuration.
    """
    if path is None:
        return RunConfig()

    try:
        document = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read config '{path}': {e}") from e

    try:
        return RunConfig.model_validate(document)
    except ValidationError as e:
        raise ConfigError(f"Invalid config '{path}': {e}") from e
