"""Patient-level uniform generalization term and the design-effect diagnostic."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data_model import Cohort, CostSpec


@dataclass(frozen=True)
class GammaSpec:
    """Confidence level and form of the generalization term.

    ``form="explicit"`` is the fully specified DKW + Hoeffding union bound
    (default). ``form="headline"`` is ``C * sqrt(log(2/delta) / n_val)`` with a
    user-chosen constant ``C``; it is kept for reporting parity only.
    """

    delta_val: float = 0.10
    form: str = "explicit"
    C: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.delta_val < 1.0:
            raise ValueError("delta_val must lie in (0, 1)")
        if self.form not in ("explicit", "headline"):
            raise ValueError(f"unknown gamma form {self.form!r}")
        if not self.C > 0:
            raise ValueError("C must be positive")


def gamma_val(spec: GammaSpec, n_val: int, n1: int, n0: int, prev_hat: float, costs: CostSpec) -> float:
    if n_val != n1 + n0:
        raise ValueError("n_val must equal n1 + n0")
    if n_val < 2:
        raise ValueError("need at least 2 validation patients")
    delta = spec.delta_val
    if spec.form == "headline":
        return spec.C * math.sqrt(math.log(2.0 / delta) / n_val)
    if n1 < 1 or n0 < 1:
        raise ValueError("explicit gamma needs at least one patient of each class")
    log_term = math.log(6.0 / delta)
    return (
        costs.c10 * prev_hat * math.sqrt(log_term / (2.0 * n1))
        + costs.c01 * (1.0 - prev_hat) * math.sqrt(log_term / (2.0 * n0))
        + (costs.c10 + costs.c01) * math.sqrt(log_term / (2.0 * n_val))
    )


def dkw_radius(n: int, delta: float) -> float:
    """Half-width of the two-sided DKW band: ``sqrt(log(2/delta) / (2n))``."""
    return math.sqrt(math.log(2.0 / delta) / (2.0 * n))


@dataclass(frozen=True)
class DesignEffect:
    n_raw: int
    n_patients: int
    mean_cluster_size: float
    icc: float
    n_eff: float

    @property
    def deff(self) -> float:
        return 1.0 + (self.mean_cluster_size - 1.0) * max(self.icc, 0.0)

    def as_dict(self) -> dict:
        return {
            "n_raw": self.n_raw,
            "n_patients": self.n_patients,
            "mean_cluster_size": self.mean_cluster_size,
            "icc": self.icc,
            "deff": self.deff,
            "n_eff": self.n_eff,
        }


def anova_icc(groups: list[np.ndarray]) -> float:
    """One-way ANOVA intraclass correlation for unbalanced groups.

    Returns 0 when the estimator is undefined (singleton groups only, or no
    variation at all).
    """
    k = len(groups)
    sizes = np.array([g.size for g in groups], dtype=float)
    N = sizes.sum()
    if k < 2 or N <= k:
        return 0.0
    means = np.array([g.mean() for g in groups])
    grand = float(np.concatenate(groups).mean())
    ssb = float(np.sum(sizes * (means - grand) ** 2))
    ssw = float(sum(np.sum((g - m) ** 2) for g, m in zip(groups, means)))
    msb = ssb / (k - 1)
    msw = ssw / (N - k)
    n0 = (N - np.sum(sizes**2) / N) / (k - 1)
    denom = msb + (n0 - 1.0) * msw
    if denom <= 0:
        return 0.0
    return float(np.clip((msb - msw) / denom, -1.0, 1.0))


def design_effect(cohort: Cohort) -> DesignEffect:
    if len(cohort) < 2:
        raise ValueError("design effect needs at least 2 patients")
    groups = [p.instances for p in cohort.patients]
    n_raw = int(sum(g.size for g in groups))
    m_bar = n_raw / len(groups)
    icc = anova_icc(groups)
    n_eff = n_raw / (1.0 + (m_bar - 1.0) * max(icc, 0.0))
    return DesignEffect(n_raw, len(groups), m_bar, icc, n_eff)
