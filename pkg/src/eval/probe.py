"""Module with the MOA-proxy probe classifier and its cross-validated evaluation."""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from joblib import Parallel, delayed
from sklearn.model_selection import StratifiedKFold
from torch import nn

from src.configs import ProbeConfig
from src.eval.auc import one_vs_all_auc
from src.utils.errors import ConfigError
from src.utils.seeding import derive_seed, numpy_rng

logger = logging.getLogger(__name__)


class ProbeCNN(nn.Module):
    """Three conv stages, global average pooling and a linear head.

    Args:
        in_channels (int): 5 for paint, 1 for brightfield.
        n_classes (int): Number of classes.
        width (int, optional): Channels of the first stage. Defaults to 32.
    """

    def __init__(self, in_channels: int, n_classes: int, width: int = 32) -> None:
        """Initialize the ProbeCNN class."""
        super().__init__()
        widths = (width, 3 * width // 2, 2 * width)
        layers = []
        previous = in_channels
        for w in widths:
            layers += [
                nn.Conv2d(previous, w, 3, padding=1),
                nn.GroupNorm(math.gcd(8, w), w),
                nn.SiLU(),
                nn.MaxPool2d(2),
            ]
            previous = w
        self.body = nn.Sequential(*layers)
        self.head = nn.Linear(previous, n_classes)
        self.feature_dim = previous

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Penultimate (pooled) features."""
        return self.body(x).mean(dim=(2, 3))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Class logits."""
        return self.head(self.features(x))


def fit_probe(
    images: np.ndarray, labels: np.ndarray, config: ProbeConfig, stream: int = 0
) -> ProbeCNN:
    """Train a probe with cross-entropy, deterministically for a given stream.

    Args:
        images (np.ndarray): NxCxHxW inputs.
        labels (np.ndarray): N integer labels.
        config (ProbeConfig): Epochs, batch size, learning rate, width and seed.
        stream (int, optional): Extra seed key, the fold index. Defaults to 0.

    Returns:
        ProbeCNN: The trained probe in eval mode.
    """
    images = torch.as_tensor(np.asarray(images, dtype=np.float32))
    labels = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    n_classes = int(labels.max()) + 1

    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(config.seed, 0x9B, stream) & 0x7FFFFFFFFFFFFFFF)
        model = ProbeCNN(images.shape[1], n_classes, config.width)

    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    model.train()
    for epoch in range(config.epochs):
        order = numpy_rng(config.seed, 0x9C, stream, epoch).permutation(len(images))
        for start in range(0, len(order), config.batch_size):
            idx = torch.as_tensor(order[start : start + config.batch_size])
            loss = F.cross_entropy(model(images[idx]), labels[idx])
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()

    model.eval()
    return model


@torch.no_grad()
def predict_scores(model: ProbeCNN, images: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Softmax class probabilities, NxC."""
    images = torch.as_tensor(np.asarray(images, dtype=np.float32))
    chunks = [
        torch.softmax(model(images[s : s + batch_size]), dim=1)
        for s in range(0, len(images), batch_size)
    ]
    return torch.cat(chunks).double().numpy()


def _run_fold(images, labels, train_idx, test_idx, config: ProbeConfig, fold: int) -> Dict[int, float]:
    model = fit_probe(images[train_idx], labels[train_idx], config, stream=fold)
    return one_vs_all_auc(predict_scores(model, images[test_idx]), labels[test_idx])


@dataclass
class ProbeReport:
    """Cross-validated per-class AUC of one input source.

    Attributes:
        source (str): Name of the input source.
        fold_aucs (list): One ``{class: auc}`` dict per fold.
    """

    source: str
    fold_aucs: List[Dict[int, float]] = field(default_factory=list)

    def frame(self) -> pd.DataFrame:
        """Folds x classes AUC table."""
        return pd.DataFrame(self.fold_aucs)

    def per_class(self) -> Dict[int, Dict[str, float]]:
        """Class to mean and standard deviation over folds."""
        df = self.frame()
        return {
            int(k): {"mean": float(df[k].mean()), "std": float(df[k].std(ddof=0))}
            for k in df.columns
        }

    @property
    def mean_auc(self) -> float:
        """AUC averaged over classes and folds."""
        return float(self.frame().to_numpy().mean())


def train_probe(
    images: np.ndarray,
    labels: np.ndarray,
    config: Optional[ProbeConfig] = None,
    source: str = "probe",
    n_jobs: int = 1,
) -> ProbeReport:
    """Cross-validate probes with stratified folds and collect per-class AUC.

    Args:
        images (np.ndarray): NxCxHxW inputs (paint, generated paint or brightfield).
        labels (np.ndarray): N integer labels.
        config (ProbeConfig, optional): Fold count and training settings.
        source (str, optional): Name recorded in the report. Defaults to "probe".
        n_jobs (int, optional): Folds trained in parallel. Defaults to 1.

    Raises:
        ConfigError: With fewer than two classes or a class smaller than the fold count.

    Returns:
        ProbeReport: Per-fold AUC tables.
    """
    config = config or ProbeConfig()
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)

    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise ConfigError("A probe needs at least two classes")
    if counts.min() < config.folds:
        raise ConfigError(
            f"Class {classes[counts.argmin()]} has {counts.min()} examples, "
            f"fewer than {config.folds} folds"
        )

    folds = StratifiedKFold(n_splits=config.folds, shuffle=True, random_state=config.seed % 2**32)
    logger.info("Training %d %s probes on %d images", config.folds, source, len(labels))
    fold_aucs = Parallel(n_jobs=n_jobs)(
        delayed(_run_fold)(images, labels, train_idx, test_idx, config, fold)
        for fold, (train_idx, test_idx) in enumerate(folds.split(np.zeros(len(labels)), labels))
    )
    report = ProbeReport(source, list(fold_aucs))
    logger.info("%s probe mean AUC %.4f", source, report.mean_auc)
    return report
