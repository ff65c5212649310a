"""Module with CLI commands."""

import json
import logging
import sys
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional

import click
import typer
from typing_extensions import Annotated

import src.eval.protocols as protocols
import src.ml_core.train as train_model
from src.configs import Domain, RunConfig, Tier, load_run_config
from src.eval.rgb import render_brightfield, render_rgb
from src.ml_core.timelapse import (
    Provenance,
    export_timelapse,
    frame_mse,
    generate_consistent,
    generate_independent,
    load_sequence,
)
from src.ml_pipelines.normalization import normalize_planes
from src.ml_pipelines.percentiles import compute_dataset_stats, load_dataset_stats
from src.store.checkpoint import load_checkpoint
from src.store.dataset_store.file_store import STATS, FileDatasetStore, dump_json
from src.store.png import export_composite_grid, export_png
from src.store.tensor_file import read_tensor, write_tensor
from src.synthdata.dataset import build_dataset
from src.utils.errors import ConfigError, MonetLabError
from src.utils.log import configure_logging
from src.utils.seeding import set_threads

logger = logging.getLogger(__name__)

app = typer.Typer(help="Virtual cell painting experiments on synthetic microscopy data.")


class Mode(str, Enum):
    """Timelapse generation modes."""

    consistent = "consistent"
    independent = "independent"


class Reference(str, Enum):
    """Reference conditioning of single-image generation."""

    none = "none"
    incontext = "incontext"


ConfigOption = Annotated[Optional[Path], typer.Option("--config", help="Run configuration JSON")]
SeedOption = Annotated[Optional[int], typer.Option("--seed", help="Override every seed of the run")]
ThreadsOption = Annotated[Optional[int], typer.Option("--threads", min=1, help="Worker threads; 1 is deterministic")]
StepsOption = Annotated[Optional[int], typer.Option("--steps", min=1, help="Sampler steps")]
OutOption = Annotated[Optional[Path], typer.Option("--out", help="Output directory")]
DatasetOption = Annotated[Optional[Path], typer.Option("--dataset", help="Dataset directory")]


def _setup(config_path: Optional[Path], seed: Optional[int] = None, threads: Optional[int] = None) -> RunConfig:
    """Load the run configuration, apply flag overrides and set thread limits."""
    config = load_run_config(str(config_path) if config_path else None)
    if seed is not None:
        config = RunConfig.model_validate(
            {
                **config.model_dump(),
                "seed": seed,
                "dataset": {**config.dataset.model_dump(), "seed": seed},
                "shifted_dataset": {**config.shifted_dataset.model_dump(), "seed": seed},
                "train": {**config.train.model_dump(), "seed": seed},
                "sampler": {**config.sampler.model_dump(), "seed": seed},
                "probe": {**config.probe.model_dump(), "seed": seed},
            }
        )
    if threads is not None:
        config = config.model_copy(update={"threads": threads})
    set_threads(config.threads)
    return config


def _base_root(config: RunConfig) -> Path:
    return Path(config.data_root) / Domain.base.value


def _shifted_root(config: RunConfig) -> Path:
    return Path(config.data_root) / Domain.shifted.value


def _parse_checkpoints(values: Optional[List[str]], config: RunConfig) -> Dict[str, str]:
    """Parse ``TIER=PATH`` flags, falling back to the configured checkpoints."""
    if not values:
        return dict(config.eval.checkpoints)
    checkpoints = {}
    for value in values:
        tier, sep, path = value.partition("=")
        if not sep:
            raise ConfigError(f"Expected TIER=PATH, got {value!r}")
        checkpoints[tier] = path
    return checkpoints


def _single_checkpoint(value: Optional[str], config: RunConfig) -> str:
    if value:
        return value
    if config.eval.checkpoints:
        return next(iter(config.eval.checkpoints.values()))
    return config.train.checkpoint_dir


@app.callback()
def main_callback(
    log: Annotated[Optional[str], typer.Option("--log", help="error, info or debug; MONETLAB_LOG otherwise")] = None,
) -> None:
    """Configure logging once per invocation."""
    configure_logging(log)


@app.command()
def synth(
    config: ConfigOption = None,
    seed: SeedOption = None,
    threads: ThreadsOption = None,
    out: Annotated[Optional[Path], typer.Option("--out", help="Data root (base/ and shifted/ are created)")] = None,
    shifted: Annotated[bool, typer.Option(help="Also build the shifted-domain dataset")] = True,
):
    """Build the base dataset with its timelapse corpus and the shifted-domain dataset."""
    run = _setup(config, seed, threads)
    if out is not None:
        run = run.model_copy(update={"data_root": str(out)})
    resolved = run.model_dump(mode="json")

    build_dataset(run.dataset, _base_root(run), n_jobs=run.threads, run_config=resolved)
    if shifted:
        build_dataset(run.shifted_dataset, _shifted_root(run), n_jobs=run.threads, run_config=resolved)
    typer.echo(f"Datasets written under {run.data_root}")


@app.command()
def stats(
    config: ConfigOption = None,
    dataset: Annotated[Optional[List[Path]], typer.Option("--dataset", help="Dataset directory, repeatable")] = None,
):
    """Compute nearest-rank percentile clip bounds and write stats.json per dataset."""
    run = _setup(config)
    roots = dataset or [r for r in (_base_root(run), _shifted_root(run)) if r.is_dir()]
    for root in roots:
        store = FileDatasetStore(root).connect()
        store.write_document(STATS, compute_dataset_stats(store).to_dict())
        typer.echo(f"Wrote {Path(root) / STATS}")


@app.command()
def train(
    config: ConfigOption = None,
    tier: Annotated[Optional[Tier], typer.Option("--tier", help="Model tier")] = None,
    seed: SeedOption = None,
    threads: ThreadsOption = None,
    train_steps: Annotated[Optional[int], typer.Option("--train-steps", min=0, help="Optimizer steps")] = None,
    steps: StepsOption = None,
    dataset: DatasetOption = None,
    out: Annotated[Optional[Path], typer.Option("--out", help="Checkpoint directory")] = None,
    resume: Annotated[bool, typer.Option(help="Continue from the latest checkpoint")] = False,
):
    """Train the velocity network of one tier with the flow-matching objective."""
    run = _setup(config, seed, threads)
    updates = {}
    if tier is not None:
        updates["tier"] = tier
    if train_steps is not None:
        updates["steps"] = train_steps
    updates["dataset"] = str(dataset) if dataset else (run.train.dataset or str(_base_root(run)))
    if out is not None:
        updates["checkpoint_dir"] = str(out)
    train_config = run.train.model_copy(update=updates)

    run_dir = train_model.train(
        train_config,
        run_config=run.model_dump(mode="json"),
        resume=resume,
        sample_steps=steps or run.sampler.steps,
    )
    typer.echo(f"Checkpoints written to {run_dir}")


@app.command()
def sample(
    checkpoint: Annotated[Optional[str], typer.Option("--checkpoint", help="Checkpoint or run directory")] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    threads: ThreadsOption = None,
    steps: StepsOption = None,
    dataset: DatasetOption = None,
    out: OutOption = None,
    reference: Annotated[Reference, typer.Option("--reference", help="Reference conditioning")] = Reference.none,
    count: Annotated[int, typer.Option("--count", min=1, help="Held-out images to generate")] = 8,
):
    """Generate paint for held-out brightfield images and export tensors and composites."""
    run = _setup(config, seed, threads)
    root = dataset or _base_root(run)
    out = Path(out or Path(run.eval.out_dir) / "samples")
    out.mkdir(parents=True, exist_ok=True)

    images = protocols.load_eval_images(root, "test", count)
    checkpoint = _single_checkpoint(checkpoint, run)
    ckpt = load_checkpoint(checkpoint)
    protocols.check_leakage(ckpt, images.ids, root)

    ref_planes, ref_meta = None, None
    if reference is Reference.incontext:
        ref_planes, ref_meta = protocols.reference_example(root, run.eval.reference_index, images.stats)

    generated = protocols.generate_paint(
        ckpt.build_model(), images.planes, steps or run.sampler.steps, run.sampler.seed,
        run.sampler.batch_size, reference=ref_planes,
    )

    entries = []
    for scene_id, planes, paint in zip(images.ids, images.planes, generated):
        write_tensor(out / f"{scene_id}.mst", paint)
        export_png(render_rgb(paint), out / f"{scene_id}.png")
        export_composite_grid(
            [render_brightfield(planes[0]), render_rgb(paint), render_rgb(planes[1:])],
            out / f"{scene_id}_grid.png",
        )
        entries.append({"id": scene_id, "tensor": f"{scene_id}.mst", "png": f"{scene_id}.png"})

    index = {
        "checkpoint": str(checkpoint),
        "reference": None if ref_meta is None else {"id": ref_meta["id"], "seed": ref_meta["seed"]},
        "samples": entries,
        "run_config": run.model_dump(mode="json"),
    }
    (out / "index.json").write_text(dump_json(index))
    typer.echo(f"Wrote {len(entries)} samples to {out}")


@app.command()
def timelapse(
    checkpoint: Annotated[Optional[str], typer.Option("--checkpoint", help="Checkpoint or run directory")] = None,
    mode: Annotated[Mode, typer.Option("--mode", help="Generation mode")] = Mode.consistent,
    sequence: Annotated[str, typer.Option("--sequence", help="Sequence id")] = "seq000",
    config: ConfigOption = None,
    seed: SeedOption = None,
    threads: ThreadsOption = None,
    steps: StepsOption = None,
    dataset: DatasetOption = None,
    out: OutOption = None,
):
    """Generate one timelapse, export its frames and record its adjacent-frame MSE."""
    run = _setup(config, seed, threads)
    root = dataset or _base_root(run)
    out = Path(out or Path(run.eval.out_dir) / "timelapse")
    out.mkdir(parents=True, exist_ok=True)

    store = FileDatasetStore(root).connect()
    ground_truth = load_sequence(store, sequence, load_dataset_stats(store), run.eval.max_frames)
    model = load_checkpoint(_single_checkpoint(checkpoint, run)).build_model()
    sampler_steps = steps or run.sampler.steps

    if mode is Mode.consistent:
        paint = generate_consistent(
            model, ground_truth.brightfield, sampler_steps, run.sampler.seed, run.sampler.anchor, run.sampler.batch_size
        )
        provenance = Provenance.generated_consistent
    else:
        paint = generate_independent(model, ground_truth.brightfield, sampler_steps, run.sampler.seed, run.sampler.batch_size)
        provenance = Provenance.generated_independent

    generated = ground_truth.with_paint(paint, provenance)
    export_timelapse(generated, out / f"{sequence}_{mode.value}", run.model_dump(mode="json"))

    mean = frame_mse(paint)[1] if len(paint) > 1 else 0.0
    protocols.write_consistency_rows(
        out / "consistency.csv", [{"sequence_id": sequence, "mode": mode.value, "mean_mse": mean}]
    )
    typer.echo(f"{sequence} {mode.value}: mean adjacent-frame MSE {mean:.6f}")


@app.command("eval-moa")
def eval_moa(
    checkpoint: Annotated[Optional[List[str]], typer.Option("--checkpoint", help="TIER=PATH, repeatable")] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    threads: ThreadsOption = None,
    steps: StepsOption = None,
    dataset: DatasetOption = None,
    out: OutOption = None,
):
    """Probe AUC on real paint, brightfield and generated paint (MOA-proxy table)."""
    run = _setup(config, seed, threads)
    report = protocols.moa_protocol(
        dataset or _base_root(run),
        _parse_checkpoints(checkpoint, run),
        run,
        out or Path(run.eval.out_dir) / "moa",
        steps or run.sampler.steps,
        n_jobs=run.threads,
    )
    typer.echo(json.dumps(report.extra["mean_auc"], indent=2))


@app.command("eval-fd")
def eval_fd(
    checkpoint: Annotated[Optional[str], typer.Option("--checkpoint", help="Checkpoint or run directory")] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    threads: ThreadsOption = None,
    steps: StepsOption = None,
    dataset: DatasetOption = None,
    out: OutOption = None,
):
    """Fréchet feature distance and pixel MSE against held-out ground truth."""
    run = _setup(config, seed, threads)
    report = protocols.fd_protocol(
        dataset or _base_root(run),
        _single_checkpoint(checkpoint, run),
        run,
        out or Path(run.eval.out_dir) / "fd",
        steps or run.sampler.steps,
    )
    typer.echo(json.dumps(report.frechet, indent=2))


@app.command("eval-consistency")
def eval_consistency(
    checkpoint: Annotated[Optional[str], typer.Option("--checkpoint", help="Checkpoint or run directory")] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    threads: ThreadsOption = None,
    steps: StepsOption = None,
    dataset: DatasetOption = None,
    out: OutOption = None,
):
    """Consistent versus independent timelapse generation over the whole corpus."""
    run = _setup(config, seed, threads)
    report = protocols.consistency_protocol(
        dataset or _base_root(run),
        _single_checkpoint(checkpoint, run),
        run,
        out or Path(run.eval.out_dir) / "consistency",
        steps or run.sampler.steps,
    )
    typer.echo(json.dumps(report.extra, indent=2))


@app.command("scale-sweep")
def scale_sweep(
    checkpoint: Annotated[Optional[List[str]], typer.Option("--checkpoint", help="TIER=PATH, repeatable")] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    threads: ThreadsOption = None,
    steps: StepsOption = None,
    dataset: DatasetOption = None,
    out: OutOption = None,
):
    """Fréchet distance and AUC ratio for tiers S, M and L."""
    run = _setup(config, seed, threads)
    sweep = protocols.scale_sweep(
        dataset or _base_root(run),
        _parse_checkpoints(checkpoint, run),
        run,
        out or Path(run.eval.out_dir) / "scale_sweep",
        steps or run.sampler.steps,
        n_jobs=run.threads,
    )
    typer.echo(sweep.to_string(index=False))


@app.command()
def adapt(
    checkpoint: Annotated[Optional[str], typer.Option("--checkpoint", help="Base-domain checkpoint")] = None,
    fine_tuned: Annotated[Optional[str], typer.Option("--fine-tuned", help="Reuse a fine-tuned checkpoint")] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    threads: ThreadsOption = None,
    steps: StepsOption = None,
    dataset: Annotated[Optional[Path], typer.Option("--dataset", help="Shifted-domain dataset")] = None,
    out: OutOption = None,
):
    """Zero-shot, in-context and fine-tuned generation on the shifted domain."""
    run = _setup(config, seed, threads)
    report = protocols.domain_adaptation_protocol(
        _single_checkpoint(checkpoint, run),
        dataset or _shifted_root(run),
        run,
        out or Path(run.eval.out_dir) / "adapt",
        steps or run.sampler.steps,
        fine_tuned_checkpoint=fine_tuned,
    )
    typer.echo(json.dumps(report.frechet, indent=2))


@app.command()
def render(
    source: Annotated[Path, typer.Argument(help="Scene directory or a 5xHxW generated paint tensor")],
    out: Annotated[Path, typer.Option("--out", help="Destination PNG")],
    dataset: Annotated[Optional[Path], typer.Option("--dataset", help="Dataset holding the scene's stats")] = None,
):
    """Render a stored scene or a generated paint tensor as an RGB composite."""
    if source.is_dir():
        root = dataset or source.parent.parent
        store = FileDatasetStore(root).connect()
        stack, _ = store.read_scene(source.name)
        paint = normalize_planes(stack.planes(), load_dataset_stats(store))[1:]
    else:
        paint = read_tensor(source)
    export_png(render_rgb(paint), out)
    typer.echo(f"Wrote {out}")


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Run the CLI and map failures to exit codes.

    0 success, 1 usage or configuration error, 2 data or format error,
    3 numerical abort.

    Args:
        argv (List[str], optional): Arguments; ``sys.argv[1:]`` when absent.

    Returns:
        int: Process exit code.
    """
    command = typer.main.get_command(app)
    try:
        result = command.main(args=argv if argv is not None else sys.argv[1:], standalone_mode=False)
    except click.exceptions.UsageError as e:
        e.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except MonetLabError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    return result if isinstance(result, int) else 0


def main() -> None:
    """Console entry point."""
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
