"""Module with Markdown report and figure writers for the evaluation protocols."""

import logging
from pathlib import Path
from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from src.utils.errors import DataFormatError  # noqa: E402

logger = logging.getLogger(__name__)


def write_markdown_report(
    output_file,
    title: str,
    tables: Dict[str, pd.DataFrame],
    figures: Optional[Dict[str, str]] = None,
    notes: Sequence[str] = (),
) -> Path:
    """Write a Markdown report of tables and figure links.

    Args:
        output_file (str | Path): Destination ``.md`` file.
        title (str): Report title.
        tables (dict): Section heading to DataFrame.
        figures (dict, optional): Caption to image path relative to the report.
        notes (Sequence[str], optional): Free-text lines appended at the end.

    Returns:
        Path: The report file.
    """
    sections = [f"# {title}", ""]
    for caption, image in (figures or {}).items():
        sections += [f"## {caption}", "", f"![{caption}](./{image})", ""]
    for heading, df in tables.items():
        sections += [f"## {heading}", "", df.to_markdown(floatfmt=".4f"), ""]
    if notes:
        sections += ["## Notes", ""] + [f"- {note}" for note in notes] + [""]

    output_file = Path(output_file)
    try:
        output_file.write_text("\n".join(sections))
    except OSError as e:
        raise DataFormatError(f"Cannot write report '{output_file}': {e}") from e

    logger.info("Report written to %s", output_file)
    return output_file


def plot_scale_sweep(sweep: pd.DataFrame, output_file) -> None:
    """Two panels: tier vs Fréchet distance and tier vs generated/real AUC ratio.

    Args:
        sweep (pd.DataFrame): Columns tier, params, fd, auc_ratio.
        output_file (str | Path): Destination PNG.
    """
    fig, (ax_fd, ax_auc) = plt.subplots(1, 2, figsize=(10, 4))
    labels = [f"{t}\n{p / 1e6:.2f}M" for t, p in zip(sweep["tier"], sweep["params"])]

    ax_fd.plot(labels, sweep["fd"], marker="o")
    ax_fd.set_title("Fréchet feature distance")
    ax_fd.set_xlabel("Tier (parameters)")
    ax_fd.set_ylabel("FD")

    ax_auc.plot(labels, sweep["auc_ratio"], marker="o", color="tab:green")
    ax_auc.set_title("Generated / real mean AUC")
    ax_auc.set_xlabel("Tier (parameters)")
    ax_auc.set_ylabel("AUC ratio")

    fig.tight_layout()
    fig.savefig(output_file)
    plt.close(fig)


def plot_frame_curves(curves: Dict[str, Sequence[float]], output_file) -> None:
    """Adjacent-frame MSE against frame index, one line per generation mode."""
    fig, ax = plt.subplots(figsize=(8, 4))
    for mode, values in curves.items():
        ax.plot(np.arange(1, len(values) + 1), values, label=mode)
    ax.set_xlabel("Frame")
    ax.set_ylabel("Adjacent-frame MSE")
    ax.set_title("Frame-to-frame variability")
    ax.legend()
    fig.tight_layout()
    fig.savefig(output_file)
    plt.close(fig)
