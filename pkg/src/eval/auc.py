"""Module with rank-based ROC AUC."""

from typing import Dict

import numpy as np
from scipy.stats import rankdata

from src.utils.errors import InvalidArgumentError


def binary_auc(scores: np.ndarray, positives: np.ndarray) -> float:
    """ROC AUC by the Mann-Whitney statistic, ties counting one half.

    Args:
        scores (np.ndarray): N scores.
        positives (np.ndarray): N booleans, True for the positive class.

    Raises:
        InvalidArgumentError: If either class is empty.

    Returns:
        float: Probability that a random positive outscores a random negative.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    positives = np.asarray(positives, dtype=bool).ravel()
    if scores.shape != positives.shape:
        raise InvalidArgumentError("scores and labels differ in length")

    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InvalidArgumentError("AUC is undefined without both positives and negatives")

    # average ranks give ties half credit
    ranks = rankdata(scores, method="average")
    u = ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def one_vs_all_auc(scores: np.ndarray, labels: np.ndarray) -> Dict[int, float]:
    """Per-class AUC of score column k against ``labels == k``.

    Args:
        scores (np.ndarray): NxC class scores.
        labels (np.ndarray): N integer labels in [0, C).

    Raises:
        InvalidArgumentError: If a class has no positives or no negatives.

    Returns:
        dict: Class index to AUC.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape[0] != labels.shape[0]:
        raise InvalidArgumentError(f"Expected NxC scores for {labels.shape[0]} labels, got {scores.shape}")
    return {k: binary_auc(scores[:, k], labels == k) for k in range(scores.shape[1])}
