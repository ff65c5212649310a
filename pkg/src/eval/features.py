"""Module with feature extractors feeding the Fréchet distance."""

import hashlib
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import torch

from src.eval.probe import ProbeCNN
from src.utils.errors import ConfigError, InvalidArgumentError

logger = logging.getLogger(__name__)

HISTOGRAM_BINS = 8
# mean, variance, gradient energy and the histogram, per channel
FEATURES_PER_CHANNEL = 3 + HISTOGRAM_BINS


class FeatureSource(str, Enum):
    """What the features were computed from."""

    real_paint = "real_paint"
    generated_paint = "generated_paint"
    brightfield = "brightfield"


@dataclass
class FeatureSet:
    """NxD feature matrix with its provenance.

    Attributes:
        matrix (np.ndarray): Float64 features, one row per image.
        source (FeatureSource): Image source.
        fingerprint (str): Identity of the extractor.
    """

    matrix: np.ndarray
    source: FeatureSource
    fingerprint: str

    @property
    def dim(self) -> int:
        """Feature dimension D."""
        return self.matrix.shape[1]


class HandcraftedExtractor:
    """Per-channel mean, variance, gradient energy and an 8-bin histogram over [-1, 1]."""

    def __init__(self, channels: int = 5) -> None:
        """Initialize the HandcraftedExtractor class.

        Args:
            channels (int, optional): Channels per image. Defaults to 5.
        """
        self.channels = channels
        self.dim = channels * FEATURES_PER_CHANNEL
        self.fingerprint = f"handcrafted-v1-c{channels}"

    def __call__(self, images: np.ndarray) -> np.ndarray:
        """Features of NxCxHxW images, (N, C * 11)."""
        images = np.clip(np.asarray(images, dtype=np.float64), -1.0, 1.0)
        n, c = images.shape[:2]
        if c != self.channels:
            raise InvalidArgumentError(f"Expected {self.channels} channels, got {c}")

        mean = images.mean(axis=(2, 3))
        variance = images.var(axis=(2, 3))
        gy = np.diff(images, axis=2)
        gx = np.diff(images, axis=3)
        energy = (gy**2).mean(axis=(2, 3)) + (gx**2).mean(axis=(2, 3))

        edges = np.linspace(-1.0, 1.0, HISTOGRAM_BINS + 1)
        flat = images.reshape(n, c, -1)
        hist = np.stack(
            [np.stack([np.histogram(p, edges)[0] for p in image]) for image in flat]
        ) / flat.shape[-1]

        per_channel = np.concatenate([mean[..., None], variance[..., None], energy[..., None], hist], axis=2)
        return per_channel.reshape(n, self.dim)


class ProbeExtractor:
    """Penultimate features of a trained probe classifier.

    Args:
        model (ProbeCNN): Trained probe.
        expected_fingerprint (str, optional): Refuse a probe whose weights differ from this.
    """

    def __init__(self, model: ProbeCNN, expected_fingerprint: Optional[str] = None) -> None:
        """Initialize the ProbeExtractor class."""
        self.model = model.eval()
        self.dim = model.feature_dim
        self.fingerprint = self.weights_fingerprint(model)
        if expected_fingerprint is not None and expected_fingerprint != self.fingerprint:
            raise ConfigError(
                f"Probe fingerprint {self.fingerprint} does not match the expected {expected_fingerprint}"
            )

    @staticmethod
    def weights_fingerprint(model: ProbeCNN) -> str:
        """SHA-256 over every parameter's bytes, in registration order."""
        digest = hashlib.sha256()
        for name, p in model.state_dict().items():
            digest.update(name.encode())
            digest.update(p.detach().cpu().numpy().tobytes())
        return "probe-" + digest.hexdigest()[:16]

    @torch.no_grad()
    def __call__(self, images: np.ndarray, batch_size: int = 128) -> np.ndarray:
        """Features of NxCxHxW images, (N, feature_dim)."""
        images = torch.as_tensor(np.asarray(images, dtype=np.float32))
        chunks = [self.model.features(images[s : s + batch_size]) for s in range(0, len(images), batch_size)]
        return torch.cat(chunks).double().numpy()


def extract_features(images: np.ndarray, extractor, source=FeatureSource.real_paint) -> FeatureSet:
    """Run an extractor over images.

    Args:
        images (np.ndarray): NxCxHxW normalized images.
        extractor (HandcraftedExtractor | ProbeExtractor): Feature map.
        source (FeatureSource, optional): Image source label.

    Returns:
        FeatureSet: Features with the extractor's fingerprint.
    """
    matrix = np.asarray(extractor(images), dtype=np.float64)
    if matrix.shape[1] != extractor.dim:
        raise InvalidArgumentError(f"Extractor returned {matrix.shape[1]} features, declared {extractor.dim}")
    logger.debug("Extracted %s features with %s", matrix.shape, extractor.fingerprint)
    return FeatureSet(matrix, FeatureSource(source), extractor.fingerprint)
