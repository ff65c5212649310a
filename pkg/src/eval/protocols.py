"""Module with the evaluation protocols: MOA-proxy AUC, Fréchet distance, scale sweep,
domain adaptation and timelapse consistency.

Every protocol writes a JSON report, a Markdown report and its figures into an
output directory, and embeds the resolved run configuration for provenance.
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional

import numpy as np
import pandas as pd
import torch

from src.configs import Configs, RunConfig, Tier
from src.eval.features import (
    FeatureSource,
    HandcraftedExtractor,
    ProbeExtractor,
    extract_features,
)
from src.eval.frechet import frechet_distance
from src.eval.probe import fit_probe, train_probe
from src.eval.rgb import render_brightfield, render_rgb
from src.ml_core.diffusion import PAINT_CHANNELS, initial_noise, sample
from src.ml_core.timelapse import (
    corpus_frame_mse,
    frame_mse,
    generate_consistent,
    generate_independent,
    load_sequence,
)
from src.ml_core.train import fine_tune, load_training_data
from src.ml_pipelines.normalization import normalize_planes
from src.ml_pipelines.percentiles import PercentileStats, load_dataset_stats
from src.model.unet import count_params, init_params
from src.store.checkpoint import Checkpoint, load_checkpoint
from src.store.dataset_store.file_store import (
    TIMELAPSE_MANIFEST,
    FileDatasetStore,
    dump_json,
)
from src.store.png import export_composite_grid
from src.synthdata.scene import effect_for
from src.utils.errors import ConfigError, DataFormatError, LeakageError
from src.utils.reports import (
    plot_frame_curves,
    plot_scale_sweep,
    write_markdown_report,
)
from src.utils.seeding import derive_seed, torch_generator

logger = logging.getLogger(__name__)

GEN_STREAM = 0x6E0
FEATURE_PROBE_STREAM = 0xFEA7
SEQUENCE_STREAM = 0x5E0


@dataclass
class EvalImages:
    """Held-out normalized images with labels.

    Attributes:
        planes (np.ndarray): Nx6xHxW normalized planes, brightfield first.
        labels (np.ndarray): N perturbation classes.
        ids (list): Scene ids.
        stats (PercentileStats): Normalization bounds.
    """

    planes: np.ndarray
    labels: np.ndarray
    ids: List[str]
    stats: PercentileStats

    @property
    def brightfield(self) -> np.ndarray:
        """Nx1xHxW brightfield."""
        return self.planes[:, :1]

    @property
    def paint(self) -> np.ndarray:
        """Nx5xHxW real paint."""
        return self.planes[:, 1:]


@dataclass
class MetricsReport:
    """Results of one protocol run.

    Attributes:
        protocol (str): Protocol name.
        auc (dict): Source to class to {"mean", "std"} over folds.
        frechet (dict): Condition to Fréchet distance.
        frame_mse (dict): Mode to corpus frame-MSE summary.
        extra (dict): Protocol specific values (ratios, pixel MSE, references).
        provenance (dict): Resolved run configuration and seeds.
    """

    protocol: str
    auc: Dict[str, Dict[int, Dict[str, float]]] = field(default_factory=dict)
    frechet: Dict[str, float] = field(default_factory=dict)
    frame_mse: Dict[str, dict] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def auc_table(self) -> pd.DataFrame:
        """Classes x sources table of "mean ± std" strings."""
        rows = {}
        for source, per_class in self.auc.items():
            for k, values in per_class.items():
                label = f"{k} {effect_for(int(k)).name}"
                rows.setdefault(label, {})[source] = f"{values['mean']:.3f} ± {values['std']:.3f}"
        return pd.DataFrame.from_dict(rows, orient="index")

    def mean_auc(self, source: str) -> float:
        """Mean AUC of a source across classes."""
        return float(np.mean([v["mean"] for v in self.auc[source].values()]))

    def to_dict(self) -> dict:
        """JSON-ready form."""
        return asdict(self)

    def write_json(self, path) -> Path:
        """Write the report as JSON."""
        path = Path(path)
        try:
            path.write_text(dump_json(self.to_dict()))
        except OSError as e:
            raise DataFormatError(f"Cannot write '{path}': {e}") from e
        return path


def _out_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataFormatError(f"Cannot create '{path}': {e}") from e
    return path


def _provenance(config: RunConfig, **seeds) -> dict:
    return {"run_config": config.model_dump(mode="json"), "seeds": seeds}


def load_eval_images(
    root, split: str = "test", max_images: Optional[int] = None, stats: PercentileStats = None
) -> EvalImages:
    """Read and normalize one split of a dataset.

    Args:
        root (str | Path): Dataset directory.
        split (str, optional): Split to read. Defaults to "test".
        max_images (int, optional): Keep only the first images.
        stats (PercentileStats, optional): Bounds; the dataset's own when absent.

    Returns:
        EvalImages: Normalized images with labels.
    """
    store = FileDatasetStore(root).connect()
    stats = stats or load_dataset_stats(store)
    df = store.fetch_to_dataframe()
    df = df.loc[df["split"] == split].iloc[:max_images]
    if df.empty:
        raise DataFormatError(f"Dataset '{root}' has no {split} scenes")

    planes = np.stack([normalize_planes(store.read_scene(i)[0].planes(), stats) for i in df["id"]])
    return EvalImages(planes, df["class"].to_numpy(dtype=np.int64), df["id"].tolist(), stats)


def check_leakage(checkpoint: Checkpoint, eval_ids: List[str], dataset_root) -> None:
    """Abort when evaluation images were seen by the generative model.

    Raises:
        LeakageError: If an evaluation id of the same dataset is among the training ids.
    """
    trained_on = checkpoint.header.get("dataset")
    if trained_on and Path(trained_on).resolve() != Path(dataset_root).resolve():
        return
    overlap = set(checkpoint.header.get("train_ids", [])) & set(eval_ids)
    if overlap:
        raise LeakageError(
            f"{len(overlap)} evaluation scenes were used to train the generator, "
            f"e.g. {sorted(overlap)[:3]}"
        )


def generate_paint(
    model,
    planes: np.ndarray,
    steps: int = Configs.sample_steps,
    seed: int = 0,
    batch_size: int = 32,
    reference: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Generate paint for every brightfield, one noise stream per image.

    Args:
        model: Velocity network.
        planes (np.ndarray): Nx6xHxW or Nx1xHxW normalized inputs; only brightfield is used.
        steps (int, optional): Sampler steps. Defaults to 50.
        seed (int, optional): Base seed. Defaults to 0.
        batch_size (int, optional): Images sampled together. Defaults to 32.
        reference (np.ndarray, optional): One 6xHxW reference shared by all images.

    Returns:
        np.ndarray: Nx5xHxW generated paint.
    """
    if isinstance(model, torch.nn.Module):
        model.eval()
    bf = torch.as_tensor(np.asarray(planes, dtype=np.float32)[:, :1])
    out = []
    for start in range(0, len(bf), batch_size):
        chunk = bf[start : start + batch_size]
        noise = torch.stack(
            [
                initial_noise((PAINT_CHANNELS,) + tuple(chunk.shape[-2:]), torch_generator(seed, GEN_STREAM, start + j))
                for j in range(len(chunk))
            ]
        )
        refs = None
        if reference is not None:
            refs = torch.as_tensor(np.asarray(reference, dtype=np.float32))[None].expand(len(chunk), -1, -1, -1)
        out.append(sample(model, chunk, refs, steps, noise=noise).numpy())
    return np.concatenate(out)


def pixel_mse(generated: np.ndarray, truth: np.ndarray) -> Dict[str, float]:
    """Per-channel and overall mean squared error of clamped generated paint.

    Args:
        generated (np.ndarray): Nx5xHxW generated paint.
        truth (np.ndarray): Nx5xHxW ground-truth paint.

    Returns:
        dict: Channel name to MSE, plus "mean".
    """
    diff = np.clip(np.asarray(generated, dtype=np.float64), -1, 1) - np.asarray(truth, dtype=np.float64)
    per_channel = (diff**2).mean(axis=(0, 2, 3))
    result = {name: float(v) for name, v in zip(Configs.paint_channels, per_channel)}
    result["mean"] = float(per_channel.mean())
    return result


def build_extractor(kind: str, paint: np.ndarray, labels: np.ndarray, config: RunConfig):
    """Feature extractor for Fréchet distances: a probe fitted on real paint or the handcrafted one."""
    if kind == "handcrafted":
        return HandcraftedExtractor(PAINT_CHANNELS)
    logger.info("Fitting the feature probe on %d real images", len(labels))
    return ProbeExtractor(fit_probe(paint, labels, config.probe, stream=FEATURE_PROBE_STREAM))


def _fd(extractor, generated: np.ndarray, real_features) -> float:
    return frechet_distance(extract_features(generated, extractor, FeatureSource.generated_paint), real_features)


def _load_model(path, images: EvalImages, dataset_root):
    checkpoint = load_checkpoint(path)
    check_leakage(checkpoint, images.ids, dataset_root)
    return checkpoint, checkpoint.build_model()


def moa_protocol(
    dataset_root,
    checkpoints: Mapping[str, str],
    config: RunConfig,
    out_dir,
    steps: int = Configs.sample_steps,
    n_jobs: int = 1,
) -> MetricsReport:
    """Compare probe AUC on real paint, brightfield and generated paint per checkpoint.

    Args:
        dataset_root (str | Path): Dataset whose test split is evaluated.
        checkpoints (Mapping): Tier label to checkpoint path.
        config (RunConfig): Resolved run configuration.
        out_dir (str | Path): Output directory.
        steps (int, optional): Sampler steps. Defaults to 50.
        n_jobs (int, optional): Parallel probe folds. Defaults to 1.

    Raises:
        LeakageError: If a generator saw an evaluation image.

    Returns:
        MetricsReport: Table of per-class AUC with generated/real ratios.
    """
    out_dir = _out_dir(out_dir)
    images = load_eval_images(dataset_root, "test", config.eval.max_images)
    report = MetricsReport("moa", provenance=_provenance(config, sampler=config.sampler.seed, probe=config.probe.seed))

    real = train_probe(images.paint, images.labels, config.probe, "real_paint", n_jobs)
    bf = train_probe(images.brightfield, images.labels, config.probe, "brightfield", n_jobs)
    report.auc["brightfield"] = bf.per_class()
    report.auc["real_paint"] = real.per_class()

    ratios = {}
    for tier, path in checkpoints.items():
        logger.info("Generating paint with tier %s", tier)
        _, model = _load_model(path, images, dataset_root)
        generated = generate_paint(model, images.planes, steps, config.sampler.seed, config.sampler.batch_size)
        probe = train_probe(generated, images.labels, config.probe, f"generated_{tier}", n_jobs)
        report.auc[f"generated_{tier}"] = probe.per_class()
        ratios[tier] = probe.mean_auc / real.mean_auc

    report.extra = {
        "auc_ratio": ratios,
        "mean_auc": {source: report.mean_auc(source) for source in report.auc},
        "n_images": len(images.ids),
    }
    report.write_json(out_dir / "moa_report.json")

    means = pd.DataFrame({"mean AUC": report.extra["mean_auc"]})
    write_markdown_report(
        out_dir / "moa_report.md",
        "MOA-proxy report",
        {"One-vs-all AUC per class (mean ± std over folds)": report.auc_table(), "Mean AUC": means},
        notes=[f"Generated / real mean AUC, tier {t}: {r:.3f}" for t, r in ratios.items()],
    )
    return report


def fd_protocol(
    dataset_root, checkpoint, config: RunConfig, out_dir, steps: int = Configs.sample_steps
) -> MetricsReport:
    """Fréchet distance and pixel MSE of generated paint against held-out ground truth.

    An untrained model of the same shape is evaluated alongside as the baseline.

    Returns:
        MetricsReport: Distances and pixel errors for the trained and untrained models.
    """
    out_dir = _out_dir(out_dir)
    images = load_eval_images(dataset_root, "test", config.eval.max_images)
    ckpt, model = _load_model(checkpoint, images, dataset_root)
    untrained = init_params(ckpt.config, config.train.seed)

    extractor = build_extractor(config.eval.extractor, images.paint, images.labels, config)
    real = extract_features(images.paint, extractor, FeatureSource.real_paint)

    seed, batch = config.sampler.seed, config.sampler.batch_size
    generated = generate_paint(model, images.planes, steps, seed, batch)
    baseline = generate_paint(untrained, images.planes, steps, seed, batch)

    report = MetricsReport("fd", provenance=_provenance(config, sampler=seed))
    report.frechet = {"trained": _fd(extractor, generated, real), "untrained": _fd(extractor, baseline, real)}
    report.extra = {
        "pixel_mse": {"trained": pixel_mse(generated, images.paint), "untrained": pixel_mse(baseline, images.paint)},
        "extractor": extractor.fingerprint,
        "checkpoint_step": ckpt.step,
    }
    report.write_json(out_dir / "fd_report.json")

    write_markdown_report(
        out_dir / "fd_report.md",
        "Fréchet distance report",
        {
            "Fréchet feature distance": pd.DataFrame({"fd": report.frechet}),
            "Pixel MSE": pd.DataFrame(report.extra["pixel_mse"]),
        },
        notes=[f"Extractor: {extractor.fingerprint}"],
    )
    return report


def scale_sweep(
    dataset_root,
    checkpoints: Mapping[str, str],
    config: RunConfig,
    out_dir,
    steps: int = Configs.sample_steps,
    n_jobs: int = 1,
) -> pd.DataFrame:
    """Fréchet distance and generated/real AUC ratio for every tier.

    Raises:
        ConfigError: If a tier checkpoint is missing.

    Returns:
        pd.DataFrame: One row per tier with tier, params, fd, auc_ratio, mean_auc.
    """
    missing = [t.value for t in Tier if t.value not in checkpoints]
    if missing:
        raise ConfigError(f"Missing checkpoints for tiers {missing}")

    out_dir = _out_dir(out_dir)
    images = load_eval_images(dataset_root, "test", config.eval.max_images)
    real_probe = train_probe(images.paint, images.labels, config.probe, "real_paint", n_jobs)
    extractor = build_extractor(config.eval.extractor, images.paint, images.labels, config)
    real = extract_features(images.paint, extractor, FeatureSource.real_paint)

    rows = []
    for tier in Tier:
        ckpt, model = _load_model(checkpoints[tier.value], images, dataset_root)
        generated = generate_paint(model, images.planes, steps, config.sampler.seed, config.sampler.batch_size)
        probe = train_probe(generated, images.labels, config.probe, f"generated_{tier.value}", n_jobs)
        rows.append(
            {
                "tier": tier.value,
                "params": count_params(ckpt.config),
                "fd": _fd(extractor, generated, real),
                "auc_ratio": probe.mean_auc / real_probe.mean_auc,
                "mean_auc": probe.mean_auc,
            }
        )
        logger.info("Tier %s: fd %.4f auc_ratio %.4f", tier.value, rows[-1]["fd"], rows[-1]["auc_ratio"])

    sweep = pd.DataFrame(rows)
    sweep[["tier", "params", "fd", "auc_ratio"]].to_csv(out_dir / "scale_sweep.csv", index=False)
    plot_scale_sweep(sweep, out_dir / "scale_sweep.png")

    report = MetricsReport("scale_sweep", provenance=_provenance(config, sampler=config.sampler.seed))
    report.frechet = {r["tier"]: r["fd"] for r in rows}
    report.extra = {"rows": rows, "real_mean_auc": real_probe.mean_auc, "extractor": extractor.fingerprint}
    report.write_json(out_dir / "scale_sweep.json")
    write_markdown_report(
        out_dir / "scale_sweep.md",
        "Scale sweep",
        {"Per tier": sweep.set_index("tier")},
        figures={"Scale sweep": "scale_sweep.png"},
    )
    return sweep


def reference_example(root, index: int, stats: PercentileStats) -> tuple:
    """Normalized 6xHxW planes and metadata of the ``index``-th training scene."""
    store = FileDatasetStore(root).connect()
    df = store.fetch_to_dataframe()
    ids = df.loc[df["split"] == "train", "id"].tolist()
    if index >= len(ids):
        raise ConfigError(f"reference_index {index} exceeds the {len(ids)} training scenes of {root}")
    stack, meta = store.read_scene(ids[index])
    return normalize_planes(stack.planes(), stats), meta


def domain_adaptation_protocol(
    base_checkpoint,
    shifted_root,
    config: RunConfig,
    out_dir,
    steps: int = Configs.sample_steps,
    fine_tuned_checkpoint=None,
) -> MetricsReport:
    """Fréchet distance on a shifted domain: zero-shot, in-context reference, fine-tuned.

    Args:
        base_checkpoint (str | Path): Model trained on the base domain only.
        shifted_root (str | Path): Shifted-domain dataset.
        config (RunConfig): Resolved run configuration.
        out_dir (str | Path): Output directory.
        steps (int, optional): Sampler steps. Defaults to 50.
        fine_tuned_checkpoint (str | Path, optional): Reuse a fine-tuned model instead of training one.

    Returns:
        MetricsReport: One distance per condition and the reference used.
    """
    out_dir = _out_dir(out_dir)
    images = load_eval_images(shifted_root, "test", config.eval.max_images)
    _, base = _load_model(base_checkpoint, images, shifted_root)

    if fine_tuned_checkpoint is None:
        data = load_training_data(shifted_root, config.train.val_examples, images.stats)
        fine_tuned_checkpoint = fine_tune(
            base_checkpoint,
            data,
            config.eval.fine_tune_steps,
            config.train,
            out_dir / "fine_tuned",
            config.model_dump(mode="json"),
        )
    _, tuned = _load_model(fine_tuned_checkpoint, images, shifted_root)

    reference, meta = reference_example(shifted_root, config.eval.reference_index, images.stats)
    seed, batch = config.sampler.seed, config.sampler.batch_size
    generated = {
        "zero_shot": generate_paint(base, images.planes, steps, seed, batch),
        "in_context": generate_paint(base, images.planes, steps, seed, batch, reference=reference),
        "fine_tuned": generate_paint(tuned, images.planes, steps, seed, batch),
    }

    extractor = build_extractor(config.eval.extractor, images.paint, images.labels, config)
    real = extract_features(images.paint, extractor, FeatureSource.real_paint)

    report = MetricsReport("domain_adaptation", provenance=_provenance(config, sampler=seed))
    report.frechet = {name: _fd(extractor, paint, real) for name, paint in generated.items()}
    report.extra = {
        "reference": {"id": meta["id"], "seed": meta["seed"], "index": config.eval.reference_index},
        "fine_tuned_checkpoint": str(fine_tuned_checkpoint),
        "pixel_mse": {name: pixel_mse(paint, images.paint) for name, paint in generated.items()},
        "extractor": extractor.fingerprint,
    }
    report.write_json(out_dir / "adaptation.json")

    tiles = [render_brightfield(images.brightfield[0])]
    tiles += [render_rgb(paint[0]) for paint in generated.values()]
    tiles.append(render_rgb(images.paint[0]))
    export_composite_grid(tiles, out_dir / "adaptation.png", columns=len(tiles))

    write_markdown_report(
        out_dir / "adaptation.md",
        "Domain adaptation",
        {"Fréchet feature distance": pd.DataFrame({"fd": report.frechet})},
        figures={"Brightfield | zero-shot | in-context | fine-tuned | ground truth": "adaptation.png"},
        notes=[f"In-context reference: {meta['id']} (seed {meta['seed']})"],
    )
    return report


def write_consistency_rows(path, rows: List[dict]) -> pd.DataFrame:
    """Merge (sequence_id, mode, mean_mse) rows into a CSV, replacing older rows of the same key."""
    path = Path(path)
    new = pd.DataFrame(rows, columns=["sequence_id", "mode", "mean_mse"])
    if path.is_file():
        old = pd.read_csv(path)
        new = pd.concat([old, new]).drop_duplicates(["sequence_id", "mode"], keep="last")
    new = new.sort_values(["sequence_id", "mode"]).reset_index(drop=True)
    new.to_csv(path, index=False)
    return new


def consistency_protocol(
    dataset_root, checkpoint, config: RunConfig, out_dir, steps: int = Configs.sample_steps
) -> MetricsReport:
    """Adjacent-frame MSE of consistent versus independent generation over the timelapse corpus.

    The gap is judged against the standard error of the per-sequence differences.

    Returns:
        MetricsReport: Corpus summaries per mode and whether the gap exceeds three standard errors.
    """
    out_dir = _out_dir(out_dir)
    store = FileDatasetStore(dataset_root).connect()
    stats = load_dataset_stats(store)
    sequences = [s["sequence_id"] for s in store.read_document(TIMELAPSE_MANIFEST)["sequences"]]
    if not sequences:
        raise DataFormatError(f"Dataset '{dataset_root}' has no timelapse sequences")

    model = load_checkpoint(checkpoint).build_model()
    outputs = {"ground_truth": [], "consistent": [], "independent": []}
    rows = []
    for index, sequence_id in enumerate(sequences):
        timelapse = load_sequence(store, sequence_id, stats, config.eval.max_frames)
        seed = derive_seed(config.sampler.seed, SEQUENCE_STREAM, index)
        outputs["ground_truth"].append(timelapse.paint)
        outputs["consistent"].append(
            generate_consistent(
                model, timelapse.brightfield, steps, seed, config.sampler.anchor, config.sampler.batch_size
            )
        )
        outputs["independent"].append(
            generate_independent(model, timelapse.brightfield, steps, seed, config.sampler.batch_size)
        )
        for mode in ("consistent", "independent"):
            rows.append({"sequence_id": sequence_id, "mode": mode, "mean_mse": frame_mse(outputs[mode][-1])[1]})
        logger.info("Sequence %s: consistent %.5f independent %.5f", sequence_id, rows[-2]["mean_mse"], rows[-1]["mean_mse"])

    report = MetricsReport("consistency", provenance=_provenance(config, sampler=config.sampler.seed))
    report.frame_mse = {mode: corpus_frame_mse(frames) for mode, frames in outputs.items()}

    gaps = np.array(report.frame_mse["independent"]["per_sequence"]) - np.array(
        report.frame_mse["consistent"]["per_sequence"]
    )
    gap_se = float(gaps.std(ddof=1) / np.sqrt(len(gaps))) if len(gaps) > 1 else 0.0
    report.extra = {
        "gap": float(gaps.mean()),
        "gap_std_error": gap_se,
        "gap_exceeds_3se": bool(gaps.mean() > 3 * gap_se),
        "anchor": config.sampler.anchor,
        "sequences": sequences,
    }
    report.write_json(out_dir / "consistency.json")
    table = write_consistency_rows(out_dir / "consistency.csv", rows)

    curves = {
        mode: np.mean([frame_mse(frames)[0] for frames in outputs[mode]], axis=0)
        for mode in ("consistent", "independent", "ground_truth")
    }
    plot_frame_curves(curves, out_dir / "consistency.png")
    summary = pd.DataFrame(
        {mode: {"mean": v["mean"], "std_error": v["std_error"]} for mode, v in report.frame_mse.items()}
    ).T
    write_markdown_report(
        out_dir / "consistency.md",
        "Timelapse consistency",
        {"Corpus adjacent-frame MSE": summary, "Per sequence": table.set_index(["sequence_id", "mode"])},
        figures={"Adjacent-frame MSE per frame": "consistency.png"},
        notes=[
            f"Gap independent - consistent: {report.extra['gap']:.5f} "
            f"(standard error {gap_se:.5f}, exceeds 3 SE: {report.extra['gap_exceeds_3se']})"
        ],
    )
    return report
