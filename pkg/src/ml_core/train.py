"""Module with methods to train the velocity network with the flow-matching objective."""

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from src.configs import Configs, TrainConfig
from src.eval.rgb import render_brightfield, render_rgb
from src.ml_core.diffusion import (
    TRAIN_TIME_STEPS,
    flow_target,
    forward_noise,
    model_input,
    sample,
)
from src.ml_pipelines.augmentation import PairedExample, make_training_pair
from src.ml_pipelines.normalization import normalize_planes
from src.ml_pipelines.percentiles import PercentileStats, load_dataset_stats
from src.model.unet import ModelConfig, VelocityUNet, count_params, init_params
from src.store.checkpoint import (
    HEADER,
    LATEST,
    load_checkpoint,
    mark_latest,
    save_checkpoint,
)
from src.store.dataset_store.file_store import FileDatasetStore
from src.store.png import export_composite_grid
from src.utils.errors import DataFormatError, InvalidArgumentError, NumericalError
from src.utils.seeding import numpy_rng, torch_generator

logger = logging.getLogger(__name__)

# Seed-stream keys; every step's randomness is a pure function of (seed, key, step).
STEP_STREAM = 0x57E9
BATCH_STREAM = 0xBA7C
VAL_STREAM = 0x7A1
SAMPLE_STREAM = 0x5A3
GRID_IMAGES = 4
METRICS_LOG = "metrics.jsonl"


@dataclass
class TrainingData:
    """Normalized training and held-out images of one dataset.

    Attributes:
        train (np.ndarray): Nx6xHxW normalized training planes.
        train_ids (list): Scene ids of ``train``.
        val (np.ndarray): Mx6xHxW normalized held-out planes.
        val_ids (list): Scene ids of ``val``.
        stats (PercentileStats): Bounds used for normalization.
        root (str): Dataset directory.
    """

    train: np.ndarray
    train_ids: List[str]
    val: np.ndarray
    val_ids: List[str]
    stats: PercentileStats
    root: str = ""


@dataclass
class TrainState:
    """Everything needed to continue training bit-exactly.

    Per-step randomness is derived from ``(seed, step)``, so the step counter
    doubles as the generator state.
    """

    model: VelocityUNet
    optimizer: torch.optim.Adam
    seed: int = 0
    step: int = 0
    grad_clip: float = 1.0
    loss_history: List[float] = field(default_factory=list)


def make_optimizer(model: VelocityUNet, lr: float) -> torch.optim.Adam:
    """Adam with betas (0.9, 0.999) and eps 1e-8."""
    return torch.optim.Adam(model.parameters(), lr=lr, betas=(0.9, 0.999), eps=1e-8)


def new_train_state(
    config: ModelConfig, lr: float, seed: int = 0, grad_clip: float = 1.0
) -> TrainState:
    """Build a fresh state with deterministic initial weights."""
    model = init_params(config, seed)
    return TrainState(model, make_optimizer(model, lr), seed=seed, grad_clip=grad_clip)


def load_training_data(root, val_examples: int = 64, stats: PercentileStats = None) -> TrainingData:
    """Read and normalize the train split and the first held-out test images.

    Args:
        root (str | Path): Dataset directory.
        val_examples (int, optional): Held-out images used for validation. Defaults to 64.
        stats (PercentileStats, optional): Bounds; read from the dataset when absent.

    Raises:
        DataFormatError: If the dataset has no training scenes.

    Returns:
        TrainingData: Normalized images and their ids.
    """
    store = FileDatasetStore(root).connect()
    stats = stats or load_dataset_stats(store)
    df = store.fetch_to_dataframe()

    train_ids = df.loc[df["split"] == "train", "id"].tolist()
    val_ids = df.loc[df["split"] == "test", "id"].tolist()[:val_examples]
    if not train_ids:
        raise DataFormatError(f"Dataset '{root}' has no training scenes")

    def normalized(ids):
        if not ids:
            return np.zeros((0, 6, 1, 1), dtype=np.float32)
        return np.stack([normalize_planes(store.read_scene(i)[0].planes(), stats) for i in ids])

    logger.info("Loading %d training and %d held-out scenes", len(train_ids), len(val_ids))
    return TrainingData(
        train=normalized(train_ids),
        train_ids=train_ids,
        val=normalized(val_ids),
        val_ids=val_ids,
        stats=stats,
        root=str(root),
    )


def _stack_batch(batch: Sequence[PairedExample]) -> Tuple[torch.Tensor, torch.Tensor]:
    if not batch:
        raise InvalidArgumentError("Training batch is empty")
    shapes = {example.target.shape for example in batch}
    if len(shapes) != 1:
        raise InvalidArgumentError(f"Batch mixes image sizes {sorted(shapes)}")
    targets = torch.from_numpy(np.stack([e.target for e in batch]).astype(np.float32))
    references = torch.from_numpy(np.stack([e.reference for e in batch]).astype(np.float32))
    return targets, references


def flow_loss(
    model, batch: Sequence[PairedExample], generator: torch.Generator
) -> torch.Tensor:
    """Flow-matching MSE on one batch, one time and noise draw per example.

    Args:
        model: Velocity network or compatible callable.
        batch (Sequence[PairedExample]): Examples of equal size.
        generator (torch.Generator): Source of times and noise.

    Returns:
        torch.Tensor: Scalar loss.
    """
    targets, references = _stack_batch(batch)
    bf, c = targets[:, :1], targets[:, 1:]

    k = torch.randint(0, TRAIN_TIME_STEPS, (len(batch),), generator=generator)
    t = k.float() / TRAIN_TIME_STEPS
    epsilon = torch.randn(c.shape, generator=generator)

    x_t = forward_noise(c, t, epsilon)
    prediction = model(model_input(bf, x_t, references), t)
    return F.mse_loss(prediction, flow_target(c, epsilon))


def training_step(state: TrainState, batch: Sequence[PairedExample]) -> Tuple[TrainState, float]:
    """Run one optimizer step.

    Args:
        state (TrainState): Model, optimizer and counters, updated in place.
        batch (Sequence[PairedExample]): Nonempty batch of equal-size examples.

    Raises:
        NumericalError: If the loss is not finite, with a diagnostic snapshot.

    Returns:
        tuple: The state and the loss measured before the update.
    """
    generator = torch_generator(state.seed, STEP_STREAM, state.step)
    state.model.train()
    loss = flow_loss(state.model, batch, generator)
    value = float(loss.detach())

    if not math.isfinite(value):
        params = [p.detach() for p in state.model.parameters()]
        snapshot = {
            "step": state.step,
            "loss": value,
            "param_norm": float(torch.sqrt(sum((p.double() ** 2).sum() for p in params))),
            "non_finite_params": int(sum((~torch.isfinite(p)).sum() for p in params)),
            "recent_losses": state.loss_history[-10:],
        }
        raise NumericalError(f"Non-finite loss at step {state.step}", snapshot)

    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    torch.nn.utils.clip_grad_norm_(state.model.parameters(), state.grad_clip)
    state.optimizer.step()

    state.step += 1
    state.loss_history.append(value)
    return state, value


def draw_batch(
    images: np.ndarray, seed: int, step: int, batch_size: int, config: TrainConfig
) -> List[PairedExample]:
    """Pick and augment the examples of one step, as a pure function of (seed, step)."""
    rng = numpy_rng(seed, BATCH_STREAM, step)
    indices = rng.integers(0, len(images), batch_size)
    return [make_training_pair(images[i], rng, config.augment) for i in indices]


def validation_batch(images: np.ndarray, seed: int, config: TrainConfig) -> List[PairedExample]:
    """Fixed held-out examples, with reference dropout drawn from the validation stream."""
    return [
        make_training_pair(image, numpy_rng(seed, VAL_STREAM, i), config.augment)
        for i, image in enumerate(images)
    ]


@torch.no_grad()
def validation_loss(model, examples: Sequence[PairedExample], seed: int, batch_size: int = 16) -> float:
    """Mean flow-matching loss over fixed examples with fixed times and noise.

    Args:
        model: Velocity network.
        examples (Sequence[PairedExample]): Held-out examples.
        seed (int): Seed of the time and noise draws.
        batch_size (int, optional): Evaluation batch size. Defaults to 16.

    Returns:
        float: Example-weighted mean loss, NaN for no examples.
    """
    if not examples:
        return float("nan")
    if isinstance(model, torch.nn.Module):
        model.eval()
    generator = torch_generator(seed, VAL_STREAM)
    total = 0.0
    for start in range(0, len(examples), batch_size):
        chunk = examples[start : start + batch_size]
        total += float(flow_loss(model, chunk, generator)) * len(chunk)
    return total / len(examples)


def dump_sample_grid(
    model: VelocityUNet, images: np.ndarray, seed: int, path, steps: int = Configs.sample_steps
) -> None:
    """Write a brightfield | generated | ground-truth grid for fixed held-out images.

    Args:
        model (VelocityUNet): Network.
        images (np.ndarray): Kx6xHxW normalized held-out images.
        seed (int): Seed of the fixed noise draws.
        path (str | Path): Destination PNG.
        steps (int, optional): Sampler steps. Defaults to 50.
    """
    model.eval()
    tiles = []
    for i, image in enumerate(images):
        bf = torch.from_numpy(image[:1].copy())
        paint = sample(model, bf, steps=steps, generator=torch_generator(seed, SAMPLE_STREAM, i))
        tiles += [render_brightfield(image[0]), render_rgb(paint.numpy()), render_rgb(image[1:])]

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    export_composite_grid(tiles, path, columns=3)
    logger.info("Sample grid written to %s", path)


def finite_metrics(record: dict) -> dict:
    """Replace non-finite float values by None so the record stays strict JSON."""
    return {
        k: None if isinstance(v, float) and not math.isfinite(v) else v for k, v in record.items()
    }


def _append_metrics(path: Path, record: dict) -> None:
    line = json.dumps(finite_metrics(record), allow_nan=False)
    try:
        with open(path, "a") as f:
            f.write(line + "\n")
    except OSError as e:
        raise DataFormatError(f"Cannot append to '{path}': {e}") from e


def train(
    config: TrainConfig,
    data: Optional[TrainingData] = None,
    run_config: dict = None,
    model_config: Optional[ModelConfig] = None,
    resume: bool = False,
    init_checkpoint=None,
    sample_steps: int = Configs.sample_steps,
) -> Path:
    """Train a velocity network and checkpoint it periodically.

    Every ``log_every`` steps a metrics line (step, loss, val_loss, wall_time)
    is appended to ``metrics.jsonl``; every ``dump_every`` steps a sample grid is
    written under ``samples/``; every ``checkpoint_every`` steps, and at the end,
    a checkpoint directory ``step_<k>`` is saved and ``latest.json`` updated.

    Args:
        config (TrainConfig): Training settings.
        data (TrainingData, optional): Preloaded data; read from ``config.dataset`` when absent.
        run_config (dict, optional): Resolved run configuration to embed in checkpoints.
        model_config (ModelConfig, optional): Network shape; the tier's shape when absent.
        resume (bool, optional): Continue from the run directory's latest checkpoint.
        init_checkpoint (str | Path, optional): Start from these weights with a fresh optimizer.
        sample_steps (int, optional): Sampler steps of the sample grids. Defaults to 50.

    Raises:
        NumericalError: If the loss becomes non-finite.
        DataFormatError: On I/O failure.

    Returns:
        Path: The run directory.
    """
    data = data or load_training_data(config.dataset, config.val_examples)
    run_dir = Path(config.checkpoint_dir)
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataFormatError(f"Cannot create run directory '{run_dir}': {e}") from e

    lr = config.resolved_lr()
    model_config = model_config or ModelConfig.for_tier(
        config.tier, config.attention_heads, config.group_count
    )

    if resume and (run_dir / LATEST).is_file():
        checkpoint = load_checkpoint(run_dir)
        model = checkpoint.build_model()
        optimizer = make_optimizer(model, lr)
        checkpoint.restore_optimizer(optimizer, model)
        state = TrainState(model, optimizer, config.seed, checkpoint.step, config.grad_clip)
        logger.info("Resuming from step %s", state.step)
    elif init_checkpoint is not None:
        model = load_checkpoint(init_checkpoint).build_model()
        state = TrainState(model, make_optimizer(model, lr), config.seed, 0, config.grad_clip)
        logger.info("Fine-tuning from %s", init_checkpoint)
    else:
        state = new_train_state(model_config, lr, config.seed, config.grad_clip)
    model_config = state.model.config

    logger.info(
        "Training tier %s (%d parameters) for %d steps, lr %s",
        config.tier.value,
        count_params(model_config),
        config.steps,
        lr,
    )

    val_examples = validation_batch(data.val, config.seed, config)
    grid_images = data.val[:GRID_IMAGES] if len(data.val) else data.train[:GRID_IMAGES]
    metrics_path = run_dir / METRICS_LOG
    extra = {
        "run_config": run_config,
        "train_config": config.model_dump(mode="json"),
        "dataset": data.root,
        "train_ids": data.train_ids,
        "stats": data.stats.to_dict(),
        "tier": config.tier.value,
        "n_params": count_params(model_config),
    }

    metrics = {}
    start = time.perf_counter()
    while state.step < config.steps:
        batch = draw_batch(data.train, config.seed, state.step, config.batch_size, config)
        _, loss = training_step(state, batch)
        step = state.step

        if step % config.log_every == 0 or step == config.steps:
            val_loss = validation_loss(state.model, val_examples, config.seed, config.batch_size)
            metrics = finite_metrics(
                {
                    "step": step,
                    "loss": loss,
                    "val_loss": val_loss,
                    "wall_time": time.perf_counter() - start,
                }
            )
            _append_metrics(metrics_path, metrics)
            logger.info("step %d loss %.5f val_loss %.5f", step, loss, val_loss)

        if step % config.dump_every == 0:
            dump_sample_grid(
                state.model, grid_images, config.seed, run_dir / "samples" / f"step_{step}.png", sample_steps
            )

        if step % config.checkpoint_every == 0 or step == config.steps:
            path = save_checkpoint(
                run_dir / f"step_{step:06d}",
                state.model,
                state.optimizer,
                step,
                config.seed,
                metrics,
                extra,
            )
            mark_latest(run_dir, path)

    final_dir = run_dir / f"step_{state.step:06d}"
    if not (final_dir / HEADER).is_file():
        path = save_checkpoint(
            final_dir, state.model, state.optimizer, state.step, config.seed, metrics, extra
        )
        mark_latest(run_dir, path)

    logger.info("Training finished at step %d", state.step)
    return run_dir


def fine_tune(
    checkpoint,
    data: TrainingData,
    steps: int,
    config: TrainConfig,
    out_dir,
    run_config: dict = None,
) -> Path:
    """Continue training a checkpoint's weights on another dataset with a fresh optimizer.

    Args:
        checkpoint (str | Path): Base checkpoint or run directory.
        data (TrainingData): Data of the new domain.
        steps (int): Optimizer steps.
        config (TrainConfig): Settings for batch size, lr and cadence.
        out_dir (str | Path): Run directory of the fine-tuned model.
        run_config (dict, optional): Resolved run configuration to embed.

    Returns:
        Path: The fine-tuned run directory.
    """
    config = config.model_copy(update={"steps": steps, "checkpoint_dir": str(out_dir)})
    return train(config, data, run_config, init_checkpoint=checkpoint)
