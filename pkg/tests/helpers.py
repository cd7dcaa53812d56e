"""Shared cohort builders for the tests."""

from __future__ import annotations

import numpy as np

from threshcert.data_model import ScoreSet


def random_cohort(rng: np.random.Generator, n: int, *, dyadic: bool = False, ties: bool = False) -> ScoreSet:
    """Random two-class scored cohort with both labels present."""
    labels = rng.integers(0, 2, size=n)
    labels[0], labels[-1] = 0, 1
    if dyadic:
        scores = rng.integers(0, 32, size=n) / 16.0
    elif ties:
        scores = np.round(rng.normal(size=n), 1)
    else:
        scores = rng.normal(size=n) + labels
    return ScoreSet(labels, scores)
