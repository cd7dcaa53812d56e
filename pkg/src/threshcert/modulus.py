"""Empirical risk modulus and its conservative upper band.

The modulus is computed in oscillation form: for each window half-width
``eps`` it is the largest cost-weighted class mass that fits in a closed
window ``[t - eps, t + eps]``. On step functions the supremum is attained by
windows whose left edge sits on an atom, so the search over atoms is exact.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import CostSpec, ScoreSet
from .empirical import LeftLimitCdf, class_cdfs
from .generalization import dkw_radius


def _window_mass(cdf: LeftLimitCdf, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    # closed window: sup of the right limit at hi minus inf of the left limit at lo
    return (cdf.count_at_most(hi) - cdf.count_below(lo)) / cdf.n


def empirical_modulus(
    cdf1: LeftLimitCdf | None,
    cdf0: LeftLimitCdf | None,
    prev: float,
    costs: CostSpec,
    eps_grid: Sequence[float] | np.ndarray,
) -> np.ndarray:
    """Exact oscillation-form modulus of the empirical class CDFs on ``eps_grid``.

    A class CDF may be ``None`` only when its cost weight is zero.
    """
    eps = np.asarray(eps_grid, dtype=float)
    if np.any(eps < 0) or np.any(np.diff(eps) < 0):
        raise ValueError("eps_grid must be nonnegative and ascending")
    parts = []
    for cdf, weight in ((cdf1, costs.c10 * prev), (cdf0, costs.c01 * (1.0 - prev))):
        if weight == 0:
            continue
        if cdf is None:
            raise ValueError("a class with positive weight needs its CDF")
        parts.append((cdf, weight))
    if not parts:
        return np.zeros_like(eps)
    atoms = np.unique(np.concatenate([cdf.sorted_values for cdf, _ in parts]))
    out = np.empty_like(eps)
    for i, e in enumerate(eps):
        hi = atoms + 2.0 * e
        total = np.zeros_like(atoms)
        for cdf, weight in parts:
            total += weight * _window_mass(cdf, atoms, hi)
        out[i] = total.max()
    return out


def isotonic_increasing(y: Sequence[float] | np.ndarray, weights: Sequence[float] | None = None) -> np.ndarray:
    """Least-squares nondecreasing fit by pool-adjacent-violators."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    # blocks as parallel stacks of (weighted mean, weight, length)
    means: list[float] = []
    wts: list[float] = []
    lens: list[int] = []
    for yi, wi in zip(y, w):
        means.append(float(yi))
        wts.append(float(wi))
        lens.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, l2 = means.pop(), wts.pop(), lens.pop()
            m1, w1 = means[-1], wts[-1]
            wt = w1 + w2
            means[-1] = (m1 * w1 + m2 * w2) / wt
            wts[-1] = wt
            lens[-1] += l2
    return np.repeat(means, lens)


@dataclass(frozen=True, eq=False)
class ModulusBand:
    eps_grid: np.ndarray
    raw: np.ndarray
    isotonic: np.ndarray
    upper: np.ndarray
    dkw_inflation: float
    delta_band: float
    ceiling: float


def band_ceiling(prev: float, costs: CostSpec) -> float:
    return costs.c10 * prev + costs.c01 * (1.0 - prev)


def conservative_band(
    raw: Sequence[float] | np.ndarray,
    eps_grid: Sequence[float] | np.ndarray,
    n1: int,
    n0: int,
    prev: float,
    costs: CostSpec,
    delta_band: float,
) -> ModulusBand:
    raw = np.array(raw, dtype=float)
    eps = np.array(eps_grid, dtype=float)
    if raw.shape != eps.shape:
        raise ValueError("raw modulus and eps grid must be aligned")
    if n1 < 1 or n0 < 1:
        raise ValueError("the DKW band needs at least one patient of each class")
    if not 0.0 < delta_band < 1.0:
        raise ValueError("delta_band must lie in (0, 1)")
    iso = isotonic_increasing(raw)
    # each class CDF gets a DKW band at level delta_band/2; an oscillation is a
    # difference of two CDF values, hence 2 * radius
    inflation = (
        costs.c10 * prev * 2.0 * dkw_radius(n1, delta_band / 2.0)
        + costs.c01 * (1.0 - prev) * 2.0 * dkw_radius(n0, delta_band / 2.0)
    )
    ceiling = band_ceiling(prev, costs)
    upper = np.minimum(iso + inflation, ceiling)
    for arr in (eps, raw, iso, upper):
        arr.flags.writeable = False
    return ModulusBand(eps, raw, iso, upper, inflation, delta_band, ceiling)


def eval_band(band: ModulusBand, eps: float) -> float:
    """Band value at the smallest grid point ``>= eps``; the ceiling past the grid."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    i = int(np.searchsorted(band.eps_grid, eps, side="left"))
    if i >= band.eps_grid.size:
        return float(band.ceiling)
    return float(band.upper[i])


def default_eps_grid(scores: np.ndarray, n_points: int = 64) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    span = float(scores.max() - scores.min()) if scores.size else 0.0
    if not span > 0:
        span = 1.0
    return np.concatenate(([0.0], np.geomspace(span / 1e4, span, n_points)))


def modulus_band(
    scores: ScoreSet,
    costs: CostSpec,
    delta_band: float,
    eps_grid: Sequence[float] | np.ndarray | None = None,
) -> ModulusBand:
    """Raw modulus plus conservative band straight from a scored cohort."""
    cdf0, cdf1 = class_cdfs(scores)
    prev = cdf1.n / len(scores)
    eps = default_eps_grid(scores.scores) if eps_grid is None else np.asarray(eps_grid, dtype=float)
    raw = empirical_modulus(cdf1, cdf0, prev, costs, eps)
    return conservative_band(raw, eps, cdf1.n, cdf0.n, prev, costs, delta_band)


def write_band(band: ModulusBand, path: str | Path) -> None:
    lines = ["eps,raw,upper"]
    lines += [
        f"{e!r},{r!r},{u!r}"
        for e, r, u in zip(band.eps_grid.tolist(), band.raw.tolist(), band.upper.tolist())
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

