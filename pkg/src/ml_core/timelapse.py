"""Module with reference-consistent and independent timelapse generation."""

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
import torch

from src.configs import Configs
from src.eval.rgb import render_brightfield, render_rgb
from src.ml_core.diffusion import PAINT_CHANNELS, initial_noise, sample
from src.ml_pipelines.normalization import normalize_planes
from src.store.dataset_store.file_store import TIMELAPSE_MANIFEST, dump_json
from src.store.png import export_composite_grid
from src.store.tensor_file import write_tensor
from src.utils.errors import DataFormatError, InvalidArgumentError
from src.utils.seeding import torch_generator

logger = logging.getLogger(__name__)

FRAME_STREAM = 0xF4A


class Provenance(str, Enum):
    """Where the paint of a timelapse comes from."""

    ground_truth = "ground_truth"
    generated_consistent = "generated_consistent"
    generated_independent = "generated_independent"


@dataclass
class Timelapse:
    """An ordered sequence of normalized frames.

    Attributes:
        sequence_id (str): Identifier of the sequence.
        brightfield (list): 1xHxW planes in temporal order.
        paint (list, optional): 5xHxW planes, one per frame.
        provenance (Provenance): Origin of ``paint``.
    """

    sequence_id: str
    brightfield: List[np.ndarray]
    paint: Optional[List[np.ndarray]] = None
    provenance: Provenance = Provenance.ground_truth

    def __post_init__(self) -> None:
        """Check frame sizes and counts."""
        if not self.brightfield:
            raise InvalidArgumentError("A timelapse needs at least one frame")
        shapes = {np.shape(bf)[-2:] for bf in self.brightfield}
        if self.paint is not None:
            if len(self.paint) != len(self.brightfield):
                raise InvalidArgumentError("paint and brightfield frame counts differ")
            shapes |= {np.shape(p)[-2:] for p in self.paint}
        if len(shapes) != 1:
            raise InvalidArgumentError(f"Frames differ in size: {sorted(shapes)}")

    def __len__(self) -> int:
        """Number of frames."""
        return len(self.brightfield)

    def with_paint(self, paint: List[np.ndarray], provenance: Provenance) -> "Timelapse":
        """Copy of this sequence carrying generated paint."""
        return Timelapse(self.sequence_id, self.brightfield, paint, Provenance(provenance))


def frame_generator(seed: int, index: int) -> torch.Generator:
    """Noise stream of frame ``index``; distinct for every frame."""
    return torch_generator(seed, FRAME_STREAM, index)


def _as_bf(frame) -> torch.Tensor:
    return torch.as_tensor(np.asarray(frame, dtype=np.float32)).reshape((1,) + np.shape(frame)[-2:])


def _sample_frames(
    model,
    bf_frames: Sequence,
    indices: Sequence[int],
    reference: Optional[torch.Tensor],
    steps: int,
    seed: int,
    batch_size: int,
) -> List[np.ndarray]:
    """Sample the listed frames in chunks, each with its own noise stream."""
    out = []
    for start in range(0, len(indices), batch_size):
        chunk = indices[start : start + batch_size]
        bf = torch.stack([_as_bf(bf_frames[i]) for i in chunk])
        noise = torch.stack(
            [
                initial_noise((PAINT_CHANNELS,) + tuple(bf.shape[-2:]), frame_generator(seed, i))
                for i in chunk
            ]
        )
        refs = None if reference is None else reference.expand(len(chunk), -1, -1, -1)
        paint = sample(model, bf, refs, steps, noise=noise)
        out += [p.numpy() for p in paint]
    return out


def generate_consistent(
    model,
    bf_frames: Sequence,
    steps: int = Configs.sample_steps,
    seed: int = 0,
    anchor: Literal["first", "previous"] = "first",
    batch_size: int = 32,
) -> List[np.ndarray]:
    """Generate paint for a sequence, conditioning later frames on generated frame 0.

    Frame 0 is sampled without a reference. With ``anchor="first"`` every later
    frame uses (brightfield 0, paint 0) as its reference; with ``anchor="previous"``
    frame i uses frame i-1 instead. Noise is drawn independently per frame.

    Args:
        model: Velocity network.
        bf_frames (Sequence): 1xHxW normalized brightfield frames.
        steps (int, optional): Sampler steps. Defaults to 50.
        seed (int, optional): Base seed of the per-frame noise streams. Defaults to 0.
        anchor (str, optional): "first" or "previous". Defaults to "first".
        batch_size (int, optional): Frames sampled together. Defaults to 32.

    Raises:
        InvalidArgumentError: If there are no frames or the anchor is unknown.

    Returns:
        list: 5xHxW paint per frame.
    """
    if len(bf_frames) == 0:
        raise InvalidArgumentError("At least one frame is required")
    if anchor not in ("first", "previous"):
        raise InvalidArgumentError(f"Unknown anchor {anchor!r}")

    frames = _sample_frames(model, bf_frames, [0], None, steps, seed, 1)

    if anchor == "first":
        reference = torch.cat([_as_bf(bf_frames[0]), torch.from_numpy(frames[0])])[None]
        frames += _sample_frames(
            model, bf_frames, list(range(1, len(bf_frames))), reference, steps, seed, batch_size
        )
    else:
        for i in range(1, len(bf_frames)):
            reference = torch.cat([_as_bf(bf_frames[i - 1]), torch.from_numpy(frames[i - 1])])[None]
            frames += _sample_frames(model, bf_frames, [i], reference, steps, seed, 1)

    return frames


def generate_independent(
    model,
    bf_frames: Sequence,
    steps: int = Configs.sample_steps,
    seed: int = 0,
    batch_size: int = 32,
) -> List[np.ndarray]:
    """Generate every frame without a reference, each from its own noise stream."""
    if len(bf_frames) == 0:
        raise InvalidArgumentError("At least one frame is required")
    if len(bf_frames) == 1:
        batch_size = 1
    return _sample_frames(model, bf_frames, list(range(len(bf_frames))), None, steps, seed, batch_size)


def frame_mse(paint_frames: Sequence) -> Tuple[List[float], float]:
    """Adjacent-frame mean squared differences.

    Args:
        paint_frames (Sequence): 5xHxW frames in temporal order.

    Raises:
        InvalidArgumentError: With fewer than two frames.

    Returns:
        tuple: Per-pair MSE (averaged over pixels and channels) and their mean.
    """
    if len(paint_frames) < 2:
        raise InvalidArgumentError("frame_mse needs at least two frames")
    frames = np.stack([np.asarray(f, dtype=np.float64) for f in paint_frames])
    deltas = np.mean((frames[1:] - frames[:-1]) ** 2, axis=tuple(range(1, frames.ndim)))
    return deltas.tolist(), float(deltas.mean())


def corpus_frame_mse(sequences: Sequence[Sequence]) -> dict:
    """Average ``frame_mse`` over several sequences.

    Returns:
        dict: ``per_sequence`` means, their ``mean`` and the across-sequence
            ``std_error`` (0 for a single sequence).
    """
    if not sequences:
        raise InvalidArgumentError("No sequences given")
    means = np.array([frame_mse(s)[1] for s in sequences])
    std_error = float(means.std(ddof=1) / np.sqrt(len(means))) if len(means) > 1 else 0.0
    return {"per_sequence": means.tolist(), "mean": float(means.mean()), "std_error": std_error}


def load_sequence(store, sequence_id: str, stats, max_frames: Optional[int] = None) -> Timelapse:
    """Read and normalize one ground-truth sequence from a dataset.

    Args:
        store (FileDatasetStore): Connected dataset store.
        sequence_id (str): Sequence to read.
        stats (PercentileStats): Normalization bounds.
        max_frames (int, optional): Keep only the first frames.

    Raises:
        DataFormatError: If the sequence is unknown.

    Returns:
        Timelapse: Ground-truth frames.
    """
    sequences = {s["sequence_id"]: s for s in store.read_document(TIMELAPSE_MANIFEST)["sequences"]}
    if sequence_id not in sequences:
        raise DataFormatError(f"Unknown sequence {sequence_id!r} in {store.root}")

    frame_ids = sequences[sequence_id]["frames"][:max_frames]
    planes = [normalize_planes(store.read_scene(i)[0].planes(), stats) for i in frame_ids]
    return Timelapse(
        sequence_id,
        brightfield=[p[:1] for p in planes],
        paint=[p[1:] for p in planes],
        provenance=Provenance.ground_truth,
    )


def export_timelapse(timelapse: Timelapse, out_dir, run_config: dict = None) -> Path:
    """Write per-frame composites, paint tensors and an index document.

    Each frame becomes ``frame_<i>.png`` (brightfield | paint composite) and
    ``frame_<i>.mst``; ``index.json`` lists them in order.

    Returns:
        Path: The index file.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataFormatError(f"Cannot create '{out_dir}': {e}") from e

    entries = []
    for i, bf in enumerate(timelapse.brightfield):
        png, tensor = f"frame_{i:04d}.png", f"frame_{i:04d}.mst"
        tiles = [render_brightfield(bf)]
        if timelapse.paint is not None:
            tiles.append(render_rgb(timelapse.paint[i]))
            write_tensor(out_dir / tensor, timelapse.paint[i])
        export_composite_grid(tiles, out_dir / png, columns=2)
        entries.append({"index": i, "png": png, "tensor": tensor if timelapse.paint else None})

    index = out_dir / "index.json"
    document = {
        "sequence_id": timelapse.sequence_id,
        "provenance": timelapse.provenance.value,
        "frames": entries,
        "run_config": run_config,
    }
    try:
        index.write_text(dump_json(document))
    except OSError as e:
        raise DataFormatError(f"Cannot write '{index}': {e}") from e

    logger.info("Exported %d frames of %s to %s", len(timelapse), timelapse.sequence_id, out_dir)
    return index
