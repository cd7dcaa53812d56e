"""Synthetic hierarchical cohorts: a two-basin Gaussian mixture with heteroskedastic noise.

Each patient gets a label and a subgroup ("sharp" or "flat"); its instances are
i.i.d. Normal draws centred on the subgroup's class mean, then perturbed by
Gaussian noise whose sd is a bump ``amplitude * exp(-(s - center)^2 / (2 width^2))``
around ``center``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data_model import Aggregator, Cohort, CostSpec, Domain, Patient, ScoreSet
from .empirical import GridMode, LeftLimitCdf, RiskCurve, empirical_risk_curve, erm_threshold, make_grid

_CHUNK_CELLS = 4_000_000


@dataclass(frozen=True)
class NoiseSpec:
    amplitude: float = 0.0
    center: float = 0.0
    width: float = 1.0

    def __post_init__(self) -> None:
        if self.amplitude < 0 or not self.width > 0:
            raise ValueError("noise amplitude must be >= 0 and width > 0")

    def sd(self, s: np.ndarray) -> np.ndarray:
        return self.amplitude * np.exp(-((s - self.center) ** 2) / (2.0 * self.width**2))


@dataclass(frozen=True)
class MixtureSpec:
    sharp_fraction: float
    sharp_mu: tuple[float, float]  # (class 0, class 1)
    sharp_sd: tuple[float, float]
    flat_mu: tuple[float, float]
    flat_sd: float
    noise: NoiseSpec = NoiseSpec()
    prevalence: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.sharp_fraction <= 1.0:
            raise ValueError("sharp_fraction must lie in [0, 1]")
        if min(self.sharp_sd) <= 0 or self.flat_sd <= 0:
            raise ValueError("all sds must be positive")
        if not 0.0 < self.prevalence < 1.0:
            raise ValueError("prevalence must lie in (0, 1)")


@dataclass(frozen=True)
class HierarchySpec:
    n_patients: int
    cells_per_patient: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_patients < 1 or self.cells_per_patient < 1:
            raise ValueError("patient and cell counts must be positive")


FIG1_P = MixtureSpec(
    sharp_fraction=0.12,
    sharp_mu=(1.9, 2.1),
    sharp_sd=(0.15, 0.13),
    flat_mu=(2.5, 4.5),
    flat_sd=1.0,
    noise=NoiseSpec(2.0, 0.90, 0.28),
)
FIG1_Q = MixtureSpec(
    sharp_fraction=0.12,
    sharp_mu=(1.95, 2.05),
    sharp_sd=(0.16, 0.14),
    flat_mu=(2.55, 4.35),
    flat_sd=1.05,
    noise=NoiseSpec(1.8, 2.00, 0.32),
)
FIG1_P_HIERARCHY = HierarchySpec(180, 800)
FIG1_Q_HIERARCHY = HierarchySpec(6000, 1)

PRESETS: dict[str, tuple[MixtureSpec, HierarchySpec, Domain]] = {
    "fig1-P": (FIG1_P, FIG1_P_HIERARCHY, Domain.INTERNAL),
    "fig1-Q": (FIG1_Q, FIG1_Q_HIERARCHY, Domain.EXTERNAL),
}


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed))


def draw_patients(mix: MixtureSpec, n: int, m: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Labels (n,) and instance scores (n, m) for ``n`` fresh patients."""
    y = (rng.random(n) < mix.prevalence).astype(int)
    sharp = rng.random(n) < mix.sharp_fraction
    mu = np.where(sharp, np.asarray(mix.sharp_mu)[y], np.asarray(mix.flat_mu)[y])
    sd = np.where(sharp, np.asarray(mix.sharp_sd)[y], mix.flat_sd)
    z = mu[:, None] + sd[:, None] * rng.standard_normal((n, m))
    if mix.noise.amplitude > 0:
        z += mix.noise.sd(z) * rng.standard_normal((n, m))
    return y, z


def generate_cohort(mix: MixtureSpec, hier: HierarchySpec, domain: Domain | str = Domain.INTERNAL) -> Cohort:
    """Deterministic given ``hier.seed``."""
    domain = Domain(domain)
    y, z = draw_patients(mix, hier.n_patients, hier.cells_per_patient, _rng(hier.seed))
    width = len(str(hier.n_patients - 1))
    patients = tuple(
        Patient(f"{domain.value}{i:0{width}d}", int(y[i]), z[i]) for i in range(hier.n_patients)
    )
    return Cohort(patients, domain)


def generate_scores(mix: MixtureSpec, hier: HierarchySpec, agg: Aggregator) -> ScoreSet:
    """Aggregated patient scores; equal to aggregating :func:`generate_cohort` output."""
    y, z = draw_patients(mix, hier.n_patients, hier.cells_per_patient, _rng(hier.seed))
    return ScoreSet(y, agg.apply_rows(z))


def sample_scores(
    mix: MixtureSpec, n: int, m: int, agg: Aggregator, rng: np.random.Generator
) -> ScoreSet:
    """Aggregated scores for ``n`` patients drawn from ``rng``, in memory-bounded chunks."""
    chunk = max(1, _CHUNK_CELLS // m)
    labels, scores = [], []
    for start in range(0, n, chunk):
        y, z = draw_patients(mix, min(chunk, n - start), m, rng)
        labels.append(y)
        scores.append(agg.apply_rows(z))
    return ScoreSet(np.concatenate(labels), np.concatenate(scores))


@dataclass(frozen=True, eq=False)
class OracleStats:
    """Large-sample stand-in for the population quantities of a mixture."""

    prev: float
    cdf0: LeftLimitCdf
    cdf1: LeftLimitCdf
    t_star: float
    risk_curve: RiskCurve
    costs: CostSpec

    def risk(self, t):
        return self.costs.c10 * self.prev * self.cdf1(t) + self.costs.c01 * (1.0 - self.prev) * (1.0 - self.cdf0(t))


def oracle_stats(
    mix: MixtureSpec,
    agg: Aggregator,
    cells_per_patient: int,
    costs: CostSpec = CostSpec(),
    n_oracle: int = 1_000_000,
    seed: int = 0,
) -> OracleStats:
    """Simulate ``n_oracle`` patients and return near-exact CDFs and the oracle minimizer.

    The mixture's nominal prevalence is used as the population prevalence.
    """
    ss = sample_scores(mix, n_oracle, cells_per_patient, agg, _rng(seed))
    grid = make_grid(ss, GridMode("midpoints"))
    curve = empirical_risk_curve(ss, costs, grid)
    cdf0, cdf1 = curve.cdf0, curve.cdf1
    prev = mix.prevalence
    risks = costs.c10 * prev * curve.f1 + costs.c01 * (1.0 - prev) * (1.0 - curve.f0)
    curve = replace(curve, risks=risks, prevalence=prev)
    return OracleStats(prev, cdf0, cdf1, erm_threshold(curve), curve, costs)
