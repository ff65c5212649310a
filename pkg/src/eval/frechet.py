"""Module with the Fréchet distance between Gaussian fits of feature sets."""

import logging
from typing import Tuple

import numpy as np
from scipy import linalg

from src.utils.errors import InvalidArgumentError, NumericalError

logger = logging.getLogger(__name__)

EIGEN_TOLERANCE = 1e-6


def gaussian_fit(features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and unbiased covariance of an NxD matrix, N >= D + 1."""
    features = np.asarray(features, dtype=np.float64)
    n, d = features.shape
    if n < d + 1:
        raise InvalidArgumentError(f"Need at least {d + 1} samples for a {d}-D covariance, got {n}")
    return features.mean(axis=0), np.atleast_2d(np.cov(features, rowvar=False))


def _psd_sqrt(matrix: np.ndarray, name: str) -> np.ndarray:
    """Square root of a symmetric positive semi-definite matrix by eigendecomposition."""
    symmetric = (matrix + matrix.T) / 2.0
    eigenvalues, eigenvectors = linalg.eigh(symmetric)
    scale = max(1.0, float(np.abs(eigenvalues).max(initial=0.0)))
    if eigenvalues.min(initial=0.0) < -EIGEN_TOLERANCE * scale:
        raise NumericalError(
            f"{name} is not positive semi-definite",
            {
                "min_eigenvalue": float(eigenvalues.min()),
                "max_eigenvalue": float(eigenvalues.max()),
                "condition": float(np.abs(eigenvalues).max() / max(np.abs(eigenvalues).min(), 1e-300)),
            },
        )
    return (eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ eigenvectors.T


def frechet_distance_from_stats(
    mu_a: np.ndarray, sigma_a: np.ndarray, mu_b: np.ndarray, sigma_b: np.ndarray
) -> float:
    """Fréchet distance between two Gaussians.

    ``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))``, where the trace of the
    product root is taken through the symmetric form ``sqrt(S_a) S_b sqrt(S_a)``.

    Raises:
        NumericalError: If a covariance or the product is not PSD beyond tolerance.

    Returns:
        float: Non-negative distance.
    """
    mu_a, mu_b = np.atleast_1d(mu_a), np.atleast_1d(mu_b)
    sigma_a, sigma_b = np.atleast_2d(sigma_a), np.atleast_2d(sigma_b)
    if mu_a.shape != mu_b.shape or sigma_a.shape != sigma_b.shape:
        raise InvalidArgumentError("Feature dimensions differ")

    root_a = _psd_sqrt(sigma_a, "first covariance")
    product = _psd_sqrt(root_a @ sigma_b @ root_a, "covariance product")

    diff = mu_a - mu_b
    distance = diff @ diff + np.trace(sigma_a) + np.trace(sigma_b) - 2.0 * np.trace(product)
    return float(max(distance, 0.0))


def frechet_distance(a, b) -> float:
    """Fréchet distance between two feature sets.

    Args:
        a (FeatureSet | np.ndarray): NxD features.
        b (FeatureSet | np.ndarray): MxD features.

    Returns:
        float: Non-negative distance.
    """
    if getattr(a, "fingerprint", None) != getattr(b, "fingerprint", None):
        raise InvalidArgumentError("Feature sets come from different extractors")
    fa = getattr(a, "matrix", a)
    fb = getattr(b, "matrix", b)
    if np.shape(fa)[1] != np.shape(fb)[1]:
        raise InvalidArgumentError(f"Feature dimensions differ: {np.shape(fa)[1]} vs {np.shape(fb)[1]}")
    return frechet_distance_from_stats(*gaussian_fit(fa), *gaussian_fit(fb))
