"""Module with methods to build synthetic datasets and timelapse corpora on disk."""

import logging
from pathlib import Path
from typing import Iterator, List

import numpy as np
from joblib import Parallel, delayed

from src.configs import DatasetConfig, Domain
from src.store.dataset_store.file_store import (
    MANIFEST,
    TIMELAPSE_MANIFEST,
    FileDatasetStore,
)
from src.synthdata.render import render
from src.synthdata.scene import SynthScene, advance, gen_scene
from src.utils.errors import InvalidDataError
from src.utils.seeding import derive_seed, numpy_rng

logger = logging.getLogger(__name__)

SPLIT_CODES = {"train": 1, "test": 2, "timelapse": 3}
DOMAIN_CODES = {Domain.base: 1, Domain.shifted: 2}


def stratified_labels(n: int, n_classes: int, rng: np.random.Generator) -> np.ndarray:
    """Return ``n`` labels with every class count within one of ``n / n_classes``.

    Args:
        n (int): Number of labels.
        n_classes (int): Number of classes.
        rng (np.random.Generator): Generator used to shuffle the order.

    Returns:
        np.ndarray: Integer labels.
    """
    return rng.permutation(np.arange(n) % n_classes)


def scene_for(config: DatasetConfig, seed: int, label: int) -> SynthScene:
    """Generate a frame-0 scene with the dataset's canvas and class settings."""
    return gen_scene(
        seed,
        label,
        config.domain,
        height=config.height,
        width=config.width,
        n_classes=config.n_classes,
        min_cells=config.min_cells,
        max_cells=config.max_cells,
    )


def iter_sequence(config: DatasetConfig, seed: int, label: int, length: int) -> Iterator[SynthScene]:
    """Yield ``length`` successive frames of one timelapse.

    Args:
        config (DatasetConfig): Dataset settings.
        seed (int): Sequence seed.
        label (int): Perturbation class of the sequence.
        length (int): Number of frames.

    Yields:
        SynthScene: Frames in temporal order.
    """
    scene = scene_for(config, seed, label)
    for _ in range(length):
        yield scene
        scene = advance(scene, max_step_px=config.max_step_px, max_cells=2 * config.max_cells)


def _write_scene(root: str, config: DatasetConfig, entry: dict) -> None:
    store = FileDatasetStore(root).connect()
    stack = render(scene_for(config, entry["seed"], entry["class"]))
    store.write_scene(entry["id"], stack, entry)


def relative_frame_delta(previous: np.ndarray, current: np.ndarray) -> float:
    """Mean absolute change between two rendered frames over the mean level of the first."""
    level = float(np.mean(np.abs(previous)))
    return float(np.mean(np.abs(current - previous))) / max(level, 1e-12)


def check_smoothness(sequence_id: str, deltas: List[float], bound: float) -> float:
    """Return the mean adjacent-frame delta of a sequence, failing above ``bound``.

    Args:
        sequence_id (str): Sequence name, used in the error message.
        deltas (list): Relative deltas of successive frame pairs.
        bound (float): Largest allowed mean delta.

    Raises:
        InvalidDataError: If the mean delta exceeds ``bound``.

    Returns:
        float: The mean delta, 0.0 for single-frame sequences.
    """
    mean = float(np.mean(deltas)) if deltas else 0.0
    if mean > bound:
        logger.error("Sequence %s: mean frame delta %.4f above %.4f", sequence_id, mean, bound)
        raise InvalidDataError(
            f"sequence {sequence_id}: mean adjacent-frame delta {mean:.4f} exceeds {bound}"
        )
    return mean


def _write_sequence(root: str, config: DatasetConfig, sequence: dict, entries: List[dict]) -> float:
    store = FileDatasetStore(root).connect()
    frames = iter_sequence(config, sequence["seed"], sequence["class"], len(entries))
    deltas, previous = [], None
    for scene, entry in zip(frames, entries):
        stack = render(scene)
        planes = stack.planes()
        if previous is not None:
            deltas.append(relative_frame_delta(previous, planes))
        previous = planes
        store.write_scene(entry["id"], stack, entry)
    return check_smoothness(sequence["sequence_id"], deltas, config.max_relative_frame_delta)


def plan_scenes(config: DatasetConfig) -> List[dict]:
    """List the train and test scenes of a dataset with their seeds and labels.

    Args:
        config (DatasetConfig): Dataset settings.

    Returns:
        list: One metadata dict per scene.
    """
    domain_code = DOMAIN_CODES[Domain(config.domain)]
    entries = []
    for split, count in (("train", config.n_train), ("test", config.n_test)):
        code = SPLIT_CODES[split]
        labels = stratified_labels(count, config.n_classes, numpy_rng(config.seed, domain_code, code))
        for i, label in enumerate(labels):
            entries.append(
                {
                    "id": f"{split}_{i:05d}",
                    "split": split,
                    "class": int(label),
                    "domain": Domain(config.domain).value,
                    "seed": derive_seed(config.seed, domain_code, code, i),
                    "sequence_id": None,
                    "frame_index": 0,
                }
            )
    return entries


def plan_sequences(config: DatasetConfig) -> List[dict]:
    """List the timelapse sequences of a dataset with their frame ids."""
    domain_code = DOMAIN_CODES[Domain(config.domain)]
    code = SPLIT_CODES["timelapse"]
    sequences = []
    for s in range(config.n_sequences):
        sequence_id = f"seq{s:03d}"
        sequences.append(
            {
                "sequence_id": sequence_id,
                "class": s % config.n_classes,
                "seed": derive_seed(config.seed, domain_code, code, s),
                "frames": [f"{sequence_id}_{t:04d}" for t in range(config.sequence_length)],
            }
        )
    return sequences


def build_dataset(config: DatasetConfig, root, n_jobs: int = 1, run_config: dict = None) -> Path:
    """Render and write a dataset, reproducibly from ``config``.

    Scenes of each split are stratified over perturbation classes. Timelapse
    sequences, if any, get their own manifest.

    Args:
        config (DatasetConfig): Dataset settings, including the seed.
        root (str | Path): Output directory.
        n_jobs (int, optional): Parallel rendering workers. Defaults to 1.
        run_config (dict, optional): Resolved run configuration to embed in the manifest.

    Raises:
        DataFormatError: On I/O failure, with the path in the message.

    Returns:
        Path: The dataset root.
    """
    store = FileDatasetStore(root).connect(create=True)
    entries = plan_scenes(config)

    logger.info("Rendering %d scenes into %s", len(entries), root)
    Parallel(n_jobs=n_jobs)(delayed(_write_scene)(str(root), config, e) for e in entries)

    class_counts = {}
    for split in ("train", "test"):
        labels = [e["class"] for e in entries if e["split"] == split]
        class_counts[split] = {str(k): labels.count(k) for k in range(config.n_classes)}

    manifest = {
        "config": config.model_dump(mode="json"),
        "seed": config.seed,
        "class_counts": class_counts,
        "scenes": entries,
    }
    if run_config is not None:
        manifest["run_config"] = run_config
    store.write_document(MANIFEST, manifest)
    build_timelapse_corpus(config, root, n_jobs)

    logger.info("Dataset written to %s", root)
    return Path(root)


def build_timelapse_corpus(config: DatasetConfig, root, n_jobs: int = 1) -> List[dict]:
    """Render the timelapse sequences of a dataset and write their manifest.

    Frames are stored as scenes ``<sequence_id>_<t>``; nothing is written when
    ``config.n_sequences`` is 0. Each sequence records its mean relative
    adjacent-frame delta, which must stay within ``config.max_relative_frame_delta``.

    Raises:
        InvalidDataError: If a sequence changes faster than the configured bound.

    Returns:
        list: The planned sequences with their frame ids.
    """
    sequences = plan_sequences(config)
    if not sequences:
        return sequences

    store = FileDatasetStore(root).connect(create=True)
    logger.info("Rendering %d sequences of %d frames", len(sequences), config.sequence_length)
    frame_entries = {}
    for sequence in sequences:
        frame_entries[sequence["sequence_id"]] = [
            {
                "id": frame_id,
                "split": "timelapse",
                "class": sequence["class"],
                "domain": Domain(config.domain).value,
                "seed": sequence["seed"],
                "sequence_id": sequence["sequence_id"],
                "frame_index": t,
            }
            for t, frame_id in enumerate(sequence["frames"])
        ]
    deltas = Parallel(n_jobs=n_jobs)(
        delayed(_write_sequence)(str(root), config, s, frame_entries[s["sequence_id"]])
        for s in sequences
    )
    for sequence, delta in zip(sequences, deltas):
        sequence["mean_frame_delta"] = delta
    store.write_document(TIMELAPSE_MANIFEST, {"sequences": sequences})
    return sequences
