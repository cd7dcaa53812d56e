"""Discrete-safe empirical CDFs, threshold grids and cost-sensitive risk curves.

Every CDF here is the *left-limit* ``F(t) = #{s < t} / n`` so that it pairs
with the decision rule ``S >= t``: a patient sitting exactly on the threshold
is called positive, and atoms in the score distribution are handled without
special cases.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import CostSpec, PatientScore, ScoreSet, as_score_set

CdfLike = Callable[[np.ndarray | float], np.ndarray | float]


class DegenerateCohortError(ValueError):
    """A class-conditional quantity was requested for a missing class."""


@dataclass(frozen=True, eq=False)
class LeftLimitCdf:
    sorted_values: np.ndarray  # distinct, ascending
    cum_counts: np.ndarray  # number of observations strictly below each value
    n: int

    @classmethod
    def from_values(cls, values: Sequence[float] | np.ndarray) -> LeftLimitCdf:
        arr = np.asarray(values, dtype=float).ravel()
        if arr.size == 0:
            raise ValueError("left_limit_cdf needs at least one value")
        uniq, counts = np.unique(arr, return_counts=True)
        below = np.concatenate(([0], np.cumsum(counts)[:-1]))
        return cls(uniq, below, int(arr.size))

    def count_below(self, t):
        """``#{s < t}`` for scalar or array ``t``."""
        idx = np.searchsorted(self.sorted_values, t, side="left")
        return np.where(idx < self.sorted_values.size, self.cum_counts[np.minimum(idx, self.sorted_values.size - 1)], self.n)

    def count_at_most(self, t):
        """``#{s <= t}``; the right limit of the step function."""
        idx = np.searchsorted(self.sorted_values, t, side="right")
        return np.where(idx < self.sorted_values.size, self.cum_counts[np.minimum(idx, self.sorted_values.size - 1)], self.n)

    def __call__(self, t):
        out = self.count_below(t) / self.n
        return float(out) if np.ndim(out) == 0 else out

    def right(self, t):
        out = self.count_at_most(t) / self.n
        return float(out) if np.ndim(out) == 0 else out


def left_limit_cdf(values: Sequence[float] | np.ndarray) -> LeftLimitCdf:
    return LeftLimitCdf.from_values(values)


@dataclass(frozen=True, eq=False)
class ThresholdGrid:
    thresholds: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.thresholds, dtype=float).ravel()
        if t.size == 0:
            raise ValueError("threshold grid is empty")
        if not np.all(np.isfinite(t)):
            raise ValueError("threshold grid has non-finite values")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("threshold grid must be strictly ascending")
        t.flags.writeable = False
        object.__setattr__(self, "thresholds", t)

    def __len__(self) -> int:
        return self.thresholds.size

    def index_of(self, t: float) -> int:
        """Index of ``t`` on the grid; raises if ``t`` is not a grid member."""
        i = int(np.searchsorted(self.thresholds, t))
        if i >= self.thresholds.size or self.thresholds[i] != t:
            raise ValueError(f"threshold {t!r} is not on the grid")
        return i


@dataclass(frozen=True)
class GridMode:
    """``midpoints`` or ``uniform`` with ``n_points``."""

    kind: str = "midpoints"
    n_points: int = 200

    def __post_init__(self) -> None:
        if self.kind not in ("midpoints", "uniform"):
            raise ValueError(f"unknown grid mode {self.kind!r}")
        if self.kind == "uniform" and self.n_points < 1:
            raise ValueError("uniform grid needs n_points >= 1")

    @classmethod
    def parse(cls, text: str) -> GridMode:
        name, _, arg = text.strip().lower().partition(":")
        if name == "midpoints" and not arg:
            return cls("midpoints")
        if name == "uniform":
            return cls("uniform", int(arg) if arg else 200)
        raise ValueError(f"cannot parse grid mode {text!r}; use 'midpoints' or 'uniform:N'")

    def __str__(self) -> str:
        return "midpoints" if self.kind == "midpoints" else f"uniform:{self.n_points}"


def make_grid(scores: ScoreSet | Sequence[PatientScore] | np.ndarray, mode: GridMode | str = GridMode()) -> ThresholdGrid:
    if isinstance(mode, str):
        mode = GridMode.parse(mode)
    values = scores if isinstance(scores, np.ndarray) else as_score_set(scores).scores
    uniq = np.unique(np.asarray(values, dtype=float))
    if uniq.size == 0:
        raise ValueError("cannot build a grid from no scores")
    if mode.kind == "midpoints":
        if uniq.size < 2:
            raise ValueError("midpoints grid needs at least 2 distinct score values")
        mids = (uniq[:-1] + uniq[1:]) / 2.0
        lo = uniq[0] - (uniq[1] - uniq[0]) / 2.0
        hi = uniq[-1] + (uniq[-1] - uniq[-2]) / 2.0
        return ThresholdGrid(np.concatenate(([lo], mids, [hi])))
    span = uniq[-1] - uniq[0]
    pad = 1e-9 * span if span > 0 else 1e-9
    return ThresholdGrid(np.linspace(uniq[0] - pad, uniq[-1] + pad, mode.n_points))


def class_cdfs(scores: ScoreSet) -> tuple[LeftLimitCdf, LeftLimitCdf]:
    """Return ``(cdf0, cdf1)``; raises if either class is absent."""
    out = []
    for y in (0, 1):
        vals = scores.scores[scores.labels == y]
        if vals.size == 0:
            raise DegenerateCohortError(f"class-conditional CDF undefined for label {y}")
        out.append(LeftLimitCdf.from_values(vals))
    return out[0], out[1]


@dataclass(frozen=True, eq=False)
class RiskCurve:
    grid: ThresholdGrid
    risks: np.ndarray
    costs: CostSpec
    prevalence: float
    cdf0: LeftLimitCdf
    cdf1: LeftLimitCdf
    f0: np.ndarray  # F0(t) on the grid (specificity)
    f1: np.ndarray  # F1(t) on the grid (miss rate)

    @property
    def thresholds(self) -> np.ndarray:
        return self.grid.thresholds

    @property
    def sensitivity(self) -> np.ndarray:
        return 1.0 - self.f1

    @property
    def specificity(self) -> np.ndarray:
        return self.f0

    @property
    def n1(self) -> int:
        return self.cdf1.n

    @property
    def n0(self) -> int:
        return self.cdf0.n

    def risk_at(self, t: float) -> float:
        return population_risk(self.prevalence, self.cdf0, self.cdf1, self.costs, t)


def empirical_risk_curve(
    scores: ScoreSet | Sequence[PatientScore], costs: CostSpec, grid: ThresholdGrid
) -> RiskCurve:
    ss = as_score_set(scores)
    if len(ss) == 0:
        raise ValueError("empirical risk needs at least one patient")
    cdf0, cdf1 = class_cdfs(ss)
    prev = cdf1.n / len(ss)
    t = grid.thresholds
    f0 = cdf0(t)
    f1 = cdf1(t)
    risks = costs.c10 * prev * f1 + costs.c01 * (1.0 - prev) * (1.0 - f0)
    return RiskCurve(grid, risks, costs, prev, cdf0, cdf1, f0, f1)


def erm_threshold(curve: RiskCurve) -> float:
    """Lowest grid threshold among the empirical risk minimizers."""
    return float(curve.thresholds[lowest_argmin(curve.risks, curve.costs)])


def lowest_argmin(values: np.ndarray, costs: CostSpec) -> int:
    # risks that agree mathematically can differ by an ulp in CDF form
    tol = TIE_TOL * max(costs.c10, costs.c01)
    return int(np.flatnonzero(values <= values.min() + tol)[0])


TIE_TOL = 1e-12


def population_risk(prev: float, cdf0: CdfLike, cdf1: CdfLike, costs: CostSpec, t):
    """Cost-sensitive risk from a prevalence and two left-limit class CDFs."""
    if not 0.0 <= prev <= 1.0:
        raise ValueError("prevalence must lie in [0, 1]")
    return costs.c10 * prev * cdf1(t) + costs.c01 * (1.0 - prev) * (1.0 - cdf0(t))


def empirical_risk(scores: ScoreSet | Sequence[PatientScore], costs: CostSpec, t: float) -> float:
    """Risk of the rule ``S >= t`` on a scored cohort, as a patient-loss average."""
    ss = as_score_set(scores)
    positive = ss.scores >= t
    fn = np.count_nonzero((ss.labels == 1) & ~positive)
    fp = np.count_nonzero((ss.labels == 0) & positive)
    return float((costs.c10 * fn + costs.c01 * fp) / len(ss))


def write_risk_curve(curve: RiskCurve, path: str | Path) -> None:
    lines = ["threshold,risk"]
    lines += [f"{t!r},{r!r}" for t, r in zip(curve.thresholds.tolist(), curve.risks.tolist())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
