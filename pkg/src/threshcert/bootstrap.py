"""Patient-block bootstrap of refit thresholds and the derived stability diagnostics."""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data_model import CostSpec, PatientScore, ScoreSet, as_score_set
from .empirical import RiskCurve, ThresholdGrid, empirical_risk_curve, erm_threshold
from .modulus import ModulusBand, eval_band

Selector = Callable[[RiskCurve], float]

MAX_REDRAWS = 100


class BootstrapError(RuntimeError):
    pass


@dataclass(frozen=True)
class BootstrapConfig:
    B: int = 200
    delta_boot: float = 0.10
    seed: int = 0
    centered_quantile: bool = False
    n_jobs: int = 1

    def __post_init__(self) -> None:
        if self.B < 1:
            raise ValueError("B must be at least 1")
        if not 0.0 < self.delta_boot < 1.0:
            raise ValueError("delta_boot must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class BootstrapSummary:
    t_hat: float
    t_star: np.ndarray
    b_hat: float
    q_radius: float
    radius: float
    g_boot: float | None = None
    replicate_risks: np.ndarray | None = None  # (B, grid) when requested

    @property
    def B(self) -> int:
        return self.t_star.size


def replicate_rng(seed: int, b: int) -> np.random.Generator:
    """Generator for replicate ``b``; independent of execution order."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))


def _resample_indices(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = labels.size
    for _ in range(MAX_REDRAWS):
        idx = rng.integers(0, n, size=n)
        n1 = int(labels[idx].sum())
        if 0 < n1 < n:
            return idx
    raise BootstrapError(f"class-degenerate bootstrap: {MAX_REDRAWS} resamples lost a class")


def upper_quantile(values: np.ndarray, level: float) -> float:
    """Order statistic at 1-based index ``ceil(level * n)``."""
    v = np.sort(np.asarray(values, dtype=float))
    k = min(max(math.ceil(round(level * v.size, 9)), 1), v.size)
    return float(v[k - 1])


def _run_replicates(fn: Callable[[int], object], B: int, n_jobs: int) -> list:
    if n_jobs == 1:
        return [fn(b) for b in range(B)]
    workers = None if n_jobs < 1 else n_jobs
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map yields in submission order, so reductions stay in replicate order
        return list(pool.map(fn, range(B)))


def bootstrap_thresholds(
    scores: ScoreSet | Sequence[PatientScore],
    costs: CostSpec,
    grid: ThresholdGrid,
    cfg: BootstrapConfig,
    selector: Selector | None = None,
    *,
    t_hat: float | None = None,
    keep_risks: bool = False,
) -> BootstrapSummary:
    """Refit the threshold on ``cfg.B`` patient resamples over a fixed grid."""
    ss = as_score_set(scores)
    if len(ss) == 0:
        raise ValueError("bootstrap needs at least one patient")
    select = selector or erm_threshold
    if t_hat is None:
        t_hat = select(empirical_risk_curve(ss, costs, grid))
    labels, values = ss.labels, ss.scores

    def one(b: int) -> tuple[float, np.ndarray]:
        idx = _resample_indices(labels, replicate_rng(cfg.seed, b))
        curve = empirical_risk_curve(ScoreSet(labels[idx], values[idx]), costs, grid)
        return select(curve), curve.risks

    results = _run_replicates(one, cfg.B, cfg.n_jobs)
    t_star = np.array([r[0] for r in results])
    dev = t_star - t_hat
    b_hat = float(dev.mean())
    spread = np.abs(dev - b_hat) if cfg.centered_quantile else np.abs(dev)
    q = upper_quantile(spread, 1.0 - cfg.delta_boot)
    risks = np.vstack([r[1] for r in results]) if keep_risks else None
    return BootstrapSummary(float(t_hat), t_star, b_hat, q, abs(b_hat) + q, None, risks)


def g_boot(summary: BootstrapSummary, band: ModulusBand) -> float:
    return eval_band(band, abs(summary.b_hat) + summary.q_radius)


def with_g_boot(summary: BootstrapSummary, band: ModulusBand) -> BootstrapSummary:
    return replace(summary, g_boot=g_boot(summary, band))


def flip_rate(test_scores: ScoreSet | Sequence[PatientScore] | np.ndarray, t_hat: float, t_star: Sequence[float]) -> float:
    """Average over patients and replicates of ``1{decision at t*_b != decision at t_hat}``."""
    if isinstance(test_scores, np.ndarray):
        s = np.asarray(test_scores, dtype=float)
    else:
        s = as_score_set(test_scores).scores
    t_star = np.asarray(t_star, dtype=float)
    if s.size == 0 or t_star.size == 0:
        raise ValueError("flip rate needs test patients and at least one replicate")
    base = s >= t_hat
    flips = (s[None, :] >= t_star[:, None]) != base[None, :]
    return float(flips.mean())


@dataclass(frozen=True, eq=False)
class InstabilityMap:
    grid: ThresholdGrid
    values: np.ndarray  # scaled to [0, 1]
    raw: np.ndarray  # smoothed sd * curvature before scaling


def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; the window is truncated at the edges."""
    if window < 1:
        raise ValueError("window must be positive")
    half = window // 2
    c = np.concatenate(([0.0], np.cumsum(x)))
    n = x.size
    lo = np.maximum(np.arange(n) - half, 0)
    hi = np.minimum(np.arange(n) + (window - 1 - half) + 1, n)
    return (c[hi] - c[lo]) / (hi - lo)


def instability_from_risks(grid: ThresholdGrid, replicate_risks: np.ndarray, smoothing_window: int = 5) -> InstabilityMap:
    if len(grid) < 3:
        raise ValueError("instability map needs a grid of at least 3 points")
    sd = replicate_risks.std(axis=0)
    mean = replicate_risks.mean(axis=0)
    d2 = np.empty_like(mean)
    d2[1:-1] = np.abs(mean[:-2] - 2.0 * mean[1:-1] + mean[2:])
    d2[0], d2[-1] = d2[1], d2[-2]
    top = d2.max()
    # an affine mean curve has no curvature, so the map vanishes; the
    # tolerance absorbs rounding in the second difference
    flat = top <= 1e-12 * max(float(np.abs(mean).max()), 1e-300)
    kappa = np.zeros_like(d2) if flat else d2 / top
    raw = moving_average(sd * kappa, smoothing_window)
    lo, hi = raw.min(), raw.max()
    values = (raw - lo) / (hi - lo) if hi > lo else np.zeros_like(raw)
    return InstabilityMap(grid, values, raw)


def instability_map(
    scores: ScoreSet | Sequence[PatientScore],
    costs: CostSpec,
    grid: ThresholdGrid,
    cfg: BootstrapConfig,
    smoothing_window: int = 5,
) -> InstabilityMap:
    """Bootstrap sd of the risk curve times a normalized curvature proxy, smoothed and scaled."""
    if len(grid) < 3:
        raise ValueError("instability map needs a grid of at least 3 points")
    summary = bootstrap_thresholds(scores, costs, grid, cfg, keep_risks=True)
    return instability_from_risks(grid, summary.replicate_risks, smoothing_window)


def write_replicates(summary: BootstrapSummary, path: str | Path) -> None:
    lines = ["b,t_star"] + [f"{b},{t!r}" for b, t in enumerate(summary.t_star.tolist())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_instability_map(imap: InstabilityMap, path: str | Path) -> None:
    lines = ["threshold,instability"]
    lines += [f"{t!r},{v!r}" for t, v in zip(imap.grid.thresholds.tolist(), imap.values.tolist())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
