"""Operating-point shift between an internal domain P and an external domain Q."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data_model import CostSpec, ScoreSet
from .empirical import LeftLimitCdf, class_cdfs


@dataclass(frozen=True, eq=False)
class DomainStats:
    prev: float
    cdf0: LeftLimitCdf
    cdf1: LeftLimitCdf

    @classmethod
    def from_scores(cls, scores: ScoreSet) -> DomainStats:
        cdf0, cdf1 = class_cdfs(scores)
        return cls(cdf1.n / len(scores), cdf0, cdf1)


@dataclass(frozen=True)
class ShiftReport:
    t: float
    delta_pi: float
    signed_gap_1: float
    signed_gap_0: float
    d1: float
    d0: float
    shift_weighted: float
    kolmogorov_1: float
    kolmogorov_0: float
    tv_labels: float
    global_bound: float

    def as_dict(self) -> dict:
        return asdict(self)


def kolmogorov_distance(f: LeftLimitCdf, g: LeftLimitCdf) -> float:
    """Exact ``sup_u |F(u) - G(u)|`` for two left-limit step CDFs.

    Both step functions are constant between merged atoms, so checking every
    atom from the left and from the right covers every attainable value.
    """
    atoms = np.union1d(f.sorted_values, g.sorted_values)
    left = np.abs(f.count_below(atoms) / f.n - g.count_below(atoms) / g.n)
    right = np.abs(f.count_at_most(atoms) / f.n - g.count_at_most(atoms) / g.n)
    return float(max(left.max(), right.max()))


def weighted_shift(delta_pi: float, d1, d0, prev_p: float, costs: CostSpec):
    return (costs.c10 + costs.c01) * delta_pi + costs.c10 * prev_p * d1 + costs.c01 * (1.0 - prev_p) * d0


def shift_at(t: float, p: DomainStats, q: DomainStats, costs: CostSpec) -> ShiftReport:
    gap1 = q.cdf1(t) - p.cdf1(t)
    gap0 = q.cdf0(t) - p.cdf0(t)
    delta_pi = abs(q.prev - p.prev)
    tv = 0.5 * (abs(q.prev - p.prev) + abs((1.0 - q.prev) - (1.0 - p.prev)))
    k1 = kolmogorov_distance(q.cdf1, p.cdf1)
    k0 = kolmogorov_distance(q.cdf0, p.cdf0)
    d1, d0 = abs(gap1), abs(gap0)
    # for binary labels the TV distance equals delta_pi; the bound uses delta_pi
    # so the pointwise domination below is exact in floating point
    return ShiftReport(
        t=float(t),
        delta_pi=delta_pi,
        signed_gap_1=gap1,
        signed_gap_0=gap0,
        d1=d1,
        d0=d0,
        shift_weighted=weighted_shift(delta_pi, d1, d0, p.prev, costs),
        kolmogorov_1=k1,
        kolmogorov_0=k0,
        tv_labels=tv,
        global_bound=weighted_shift(delta_pi, k1, k0, p.prev, costs),
    )


def shift_profile(thresholds: np.ndarray, p: DomainStats, q: DomainStats, costs: CostSpec) -> np.ndarray:
    """Weighted shift evaluated at every threshold of a grid."""
    t = np.asarray(thresholds, dtype=float)
    d1 = np.abs(q.cdf1(t) - p.cdf1(t))
    d0 = np.abs(q.cdf0(t) - p.cdf0(t))
    return weighted_shift(abs(q.prev - p.prev), d1, d0, p.prev, costs)
