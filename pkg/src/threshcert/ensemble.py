"""Quantile-scale ensembling of thresholds across scorers or sites.

Each source threshold is mapped to the fraction of its reference scores lying
strictly below it, the fractions are averaged, and the average is mapped back
through the target cohort's order statistics. Only ranks are used, so any
strictly increasing rescaling of the scores leaves the induced decisions
unchanged.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuantileMappedThreshold:
    source_id: str
    threshold: float
    quantile_u: float
    weight: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.quantile_u <= 1.0:
            raise ValueError("quantile_u must lie in [0, 1]")
        if not self.weight >= 0:
            raise ValueError("weight must be nonnegative")

    @classmethod
    def from_reference(
        cls, source_id: str, threshold: float, ref_scores: Sequence[float], weight: float = 1.0
    ) -> QuantileMappedThreshold:
        return cls(source_id, float(threshold), to_quantile(threshold, ref_scores), weight)


def to_quantile(threshold: float, ref_scores: Sequence[float] | np.ndarray) -> float:
    ref = np.asarray(ref_scores, dtype=float)
    if ref.size == 0:
        raise ValueError("reference scores are empty")
    return float(np.count_nonzero(ref < threshold) / ref.size)


def from_quantile(u: float, target_scores: Sequence[float] | np.ndarray) -> float:
    """Smallest target score whose left-limit rank fraction reaches ``u``.

    Returns the order statistic ``S_(k)`` with ``k = floor(u*n) + 1``, so that
    ``#{s < S_(k)} / n`` is the largest achievable value not exceeding ``u``.
    ``u = 1`` maps just above the maximum (everyone negative).
    """
    s = np.sort(np.asarray(target_scores, dtype=float))
    if s.size == 0:
        raise ValueError("target scores are empty")
    # tolerance absorbs u*n landing an ulp below an integer
    k = math.floor(u * s.size + 1e-9) + 1
    if k > s.size:
        return float(np.nextafter(s[-1], np.inf))
    return float(s[k - 1])


def ensemble_quantile(items: Sequence[QuantileMappedThreshold], weighting: str = "uniform") -> float:
    if not items:
        raise ValueError("ensemble needs at least one item")
    u = np.array([it.quantile_u for it in items])
    if weighting == "uniform":
        return float(u.mean())
    if weighting != "precision":
        raise ValueError(f"unknown weighting {weighting!r}")
    w = np.array([it.weight for it in items], dtype=float)
    if np.isinf(w).any():
        # infinitely precise items dominate; share equally among them
        return float(u[np.isinf(w)].mean())
    if not w.sum() > 0:
        raise ValueError("all ensemble weights are zero")
    return float(np.dot(w, u) / w.sum())


def ensemble_thresholds(
    items: Sequence[QuantileMappedThreshold],
    target_scores: Sequence[float] | np.ndarray,
    weighting: str = "uniform",
) -> float:
    return from_quantile(ensemble_quantile(items, weighting), target_scores)


def precision_weight(replicate_quantiles: Sequence[float] | np.ndarray) -> float:
    """Inverse bootstrap variance of a source's quantile; ``inf`` when it never moves."""
    var = float(np.var(np.asarray(replicate_quantiles, dtype=float), ddof=1)) if len(replicate_quantiles) > 1 else 0.0
    return math.inf if var == 0 else 1.0 / var
