"""Threshold selection rules: ERM, Youden, constrained ROC cuts and the penalized objectives."""

from __future__ import annotations

import warnings
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bootstrap import (
    BootstrapConfig,
    BootstrapSummary,
    InstabilityMap,
    Selector,
    bootstrap_thresholds,
    upper_quantile,
    with_g_boot,
)
from .data_model import Aggregator, CostSpec, PatientScore, ScoreSet, as_score_set
from .empirical import (
    TIE_TOL,
    GridMode,
    RiskCurve,
    empirical_risk_curve,
    erm_threshold,
    lowest_argmin,
    make_grid,
)
from .modulus import ModulusBand, modulus_band

FIGURE_LAMBDA_QUANTILE = 0.58
FIGURE_LAMBDA_SCALE = 1.15
FIGURE_MAX_MOVE = 0.90


class InfeasibleConstraintError(ValueError):
    """No grid threshold satisfies a sensitivity/specificity constraint."""


@dataclass(frozen=True)
class SelectorKind:
    """``erm``, ``youden``, ``sens`` / ``spec`` (with a target) or ``penalized``."""

    kind: str = "erm"
    target: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("erm", "youden", "sens", "spec", "penalized"):
            raise ValueError(f"unknown selector {self.kind!r}")
        if self.kind in ("sens", "spec"):
            if self.target is None or not 0.0 < self.target < 1.0:
                raise ValueError("constrained cuts need a target in (0, 1)")
        elif self.target is not None:
            raise ValueError(f"{self.kind} takes no target")

    @classmethod
    def parse(cls, text: str) -> SelectorKind:
        name, _, arg = text.strip().lower().partition(":")
        if name in ("sens", "spec"):
            return cls(name, float(arg))
        if arg:
            raise ValueError(f"{name} takes no target")
        return cls(name)

    def __str__(self) -> str:
        return f"{self.kind}:{self.target:g}" if self.target is not None else self.kind


ERM = SelectorKind("erm")
YOUDEN = SelectorKind("youden")


def select_threshold(curve: RiskCurve, kind: SelectorKind = ERM) -> float:
    """Apply one selection rule to a risk curve; always returns a grid member.

    ``penalized`` resolves to ERM here: the penalty only ranks candidates
    (see :func:`penalized_select`), the threshold itself is the ERM one.
    """
    t = curve.thresholds
    if kind.kind in ("erm", "penalized"):
        return erm_threshold(curve)
    if kind.kind == "youden":
        j = curve.specificity - curve.f1
        return float(t[int(np.flatnonzero(j >= j.max() - TIE_TOL)[0])])
    if kind.kind == "sens":
        feasible = np.flatnonzero(curve.sensitivity >= kind.target - TIE_TOL)
        if feasible.size == 0:
            raise InfeasibleConstraintError(
                f"no threshold reaches sensitivity >= {kind.target:g}; best achievable is {curve.sensitivity.max():.6g}"
            )
        return float(t[feasible[-1]])
    feasible = np.flatnonzero(curve.specificity >= kind.target - TIE_TOL)
    if feasible.size == 0:
        raise InfeasibleConstraintError(
            f"no threshold reaches specificity >= {kind.target:g}; best achievable is {curve.specificity.max():.6g}"
        )
    return float(t[feasible[0]])


def rule(kind: SelectorKind) -> Selector:
    """Wrap a rule as a bootstrap selector."""
    return lambda curve: select_threshold(curve, kind)


@dataclass(frozen=True)
class Candidate:
    method_id: str
    aggregator: Aggregator

    def __post_init__(self) -> None:
        if not self.method_id:
            raise ValueError("method_id must be nonempty")

    @property
    def label(self) -> str:
        return f"{self.method_id}/{self.aggregator}"


@dataclass(frozen=True)
class SelectionResult:
    candidate: Candidate
    t_hat: float
    min_val_risk: float
    g_boot: float
    objective_j: float


@dataclass(frozen=True, eq=False)
class CandidateEvaluation:
    result: SelectionResult
    curve: RiskCurve
    summary: BootstrapSummary
    band: ModulusBand


def evaluate_candidate(
    candidate: Candidate,
    scores: ScoreSet | Sequence[PatientScore],
    costs: CostSpec,
    grid_mode: GridMode,
    boot: BootstrapConfig,
    delta_band: float,
    eps_grid: np.ndarray | None = None,
) -> CandidateEvaluation:
    ss = as_score_set(scores)
    grid = make_grid(ss, grid_mode)
    curve = empirical_risk_curve(ss, costs, grid)
    t_hat = erm_threshold(curve)
    band = modulus_band(ss, costs, delta_band, eps_grid)
    summary = with_g_boot(bootstrap_thresholds(ss, costs, grid, boot, t_hat=t_hat), band)
    min_risk = float(curve.risks.min())
    result = SelectionResult(candidate, t_hat, min_risk, summary.g_boot, min_risk + summary.g_boot)
    return CandidateEvaluation(result, curve, summary, band)


def penalized_select(
    candidates: Sequence[tuple[Candidate, ScoreSet | Sequence[PatientScore]]],
    costs: CostSpec,
    grid_mode: GridMode = GridMode(),
    boot: BootstrapConfig = BootstrapConfig(),
    delta_band: float = 0.10,
    eps_grid: np.ndarray | None = None,
) -> tuple[SelectionResult, list[CandidateEvaluation]]:
    """Minimize ``min_t R(t) + G_boot`` over candidates.

    Ties in the objective go to the smaller validation risk, then to the
    earlier candidate. Failing candidates are dropped with a warning.
    """
    if not candidates:
        raise ValueError("penalized selection needs at least one candidate")
    table: list[CandidateEvaluation] = []
    for cand, scores in candidates:
        try:
            table.append(evaluate_candidate(cand, scores, costs, grid_mode, boot, delta_band, eps_grid))
        except (ValueError, RuntimeError) as exc:
            warnings.warn(f"candidate {cand.label} excluded: {exc}", stacklevel=2)
    if not table:
        raise ValueError("all candidates failed")
    best = table[0].result
    for ev in table[1:]:
        r = ev.result
        if r.objective_j < best.objective_j - TIE_TOL or (
            abs(r.objective_j - best.objective_j) <= TIE_TOL and r.min_val_risk < best.min_val_risk - TIE_TOL
        ):
            best = r
    return best, table


@dataclass(frozen=True)
class DirectionCap:
    anchor: float
    max_move: float = FIGURE_MAX_MOVE
    rightward: bool = True


def figure_lambda(curve: RiskCurve, imap: InstabilityMap) -> float:
    """Penalty weight matching the 0.58-quantile of the map to 1.15x the risk range."""
    q = upper_quantile(imap.values, FIGURE_LAMBDA_QUANTILE)
    if q <= 0:
        return 0.0
    return FIGURE_LAMBDA_SCALE * float(curve.risks.max() - curve.risks.min()) / q


def _check_grids(curve: RiskCurve, imap: InstabilityMap) -> None:
    if curve.thresholds.shape != imap.grid.thresholds.shape or not np.array_equal(
        curve.thresholds, imap.grid.thresholds
    ):
        raise ValueError("risk curve and instability map must share the grid")


def penalized_select_per_t(
    curve: RiskCurve,
    imap: InstabilityMap,
    lam: float | str = "figure",
    direction_cap: DirectionCap | None = None,
) -> float:
    """Minimize ``R(t) + lam * map(t)`` over the grid (illustrative per-threshold variant).

    ``lam="figure"`` calibrates the weight with :func:`figure_lambda`.
    """
    _check_grids(curve, imap)
    if isinstance(lam, str):
        if lam != "figure":
            raise ValueError(f"unknown lambda mode {lam!r}")
        lam = figure_lambda(curve, imap)
    return _per_t_argmin(curve, imap.values, float(lam), direction_cap)


def _per_t_argmin(curve: RiskCurve, penalty: np.ndarray, lam: float, cap: DirectionCap | None) -> float:
    t = curve.thresholds
    j = curve.risks + lam * penalty
    allowed = np.ones(t.size, dtype=bool)
    if cap is not None:
        if cap.rightward:
            allowed = (t >= cap.anchor) & (t <= cap.anchor + cap.max_move)
        else:
            allowed = (t <= cap.anchor) & (t >= cap.anchor - cap.max_move)
        if not allowed.any():
            raise ValueError("direction cap leaves no admissible threshold")
    idx = np.flatnonzero(allowed)
    return float(t[idx[lowest_argmin(j[idx], curve.costs)]])


def per_t_selector(imap: InstabilityMap, lam: float, max_move: float | None = FIGURE_MAX_MOVE) -> Selector:
    """Per-threshold penalized rule with a frozen map and weight, for refitting on resamples.

    Each refit anchors its direction cap at its own ERM threshold.
    """

    def select(curve: RiskCurve) -> float:
        _check_grids(curve, imap)
        cap = None if max_move is None else DirectionCap(erm_threshold(curve), max_move)
        return _per_t_argmin(curve, imap.values, lam, cap)

    return select


def write_candidate_table(table: Sequence[CandidateEvaluation], path: str | Path) -> None:
    lines = ["method,aggregator,t_hat,val_risk,g_boot,J"]
    for ev in table:
        r = ev.result
        lines.append(
            f"{r.candidate.method_id},{r.candidate.aggregator},{r.t_hat!r},{r.min_val_risk!r},{r.g_boot!r},{r.objective_j!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
