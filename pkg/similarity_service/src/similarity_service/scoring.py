"""Greedy max-cosine token matching between two embedded phrases.

Recall matches every reference token to its best candidate token,
precision matches every candidate token to its best reference token, and
f1 is their harmonic mean. Optional idf weighting and baseline rescaling
are off by default; scores are clamped to [0, 1] at the end, after which
the harmonic-mean relation between the three numbers is exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class Score:
    precision: float
    recall: float
    f1: float
    tokens_candidate: int
    tokens_reference: int


def _weighted_mean(values: np.ndarray, weights: Optional[np.ndarray]) -> float:
    if weights is None:
        return float(values.mean())
    total = float(weights.sum())
    if total == 0.0:
        return float(values.mean())
    return float((values * weights).sum() / total)


def _rescale(value: float, baseline: Optional[float]) -> float:
    if baseline is not None and baseline < 1.0:
        value = (value - baseline) / (1.0 - baseline)
    return min(1.0, max(0.0, value))


def greedy_match_score(
    candidate_embeddings: np.ndarray,
    reference_embeddings: np.ndarray,
    candidate_weights: Optional[np.ndarray] = None,
    reference_weights: Optional[np.ndarray] = None,
    baseline: Optional[float] = None,
) -> Score:
    similarity = candidate_embeddings @ reference_embeddings.T
    precision = _weighted_mean(similarity.max(axis=1), candidate_weights)
    recall = _weighted_mean(similarity.max(axis=0), reference_weights)
    precision = _rescale(precision, baseline)
    recall = _rescale(recall, baseline)
    if precision + recall == 0.0:
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return Score(
        precision=precision,
        recall=recall,
        f1=f1,
        tokens_candidate=candidate_embeddings.shape[0],
        tokens_reference=reference_embeddings.shape[0],
    )


def idf_weights(tokens: list[str], table: Optional[dict]) -> Optional[np.ndarray]:
    """Per-token weights from an idf table; None keeps uniform weighting."""
    if table is None:
        return None
    return np.array([float(table.get(token, 1.0)) for token in tokens])
