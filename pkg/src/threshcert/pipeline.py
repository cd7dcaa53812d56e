"""Selection-honest certify pipeline: pick on train, evaluate and bound on validation, compare on Q."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .bootstrap import (
    BootstrapConfig,
    BootstrapSummary,
    InstabilityMap,
    bootstrap_thresholds,
    flip_rate,
    instability_from_risks,
)
from .certificate import Certificate, build_certificate, certificate_report
from .data_model import CostSpec, ScoreSet
from .empirical import GridMode, RiskCurve, class_cdfs, empirical_risk, empirical_risk_curve, make_grid
from .generalization import GammaSpec, gamma_val
from .modulus import ModulusBand, default_eps_grid, eval_band, modulus_band
from .selection import ERM, SelectorKind, rule, select_threshold
from .shift import DomainStats, shift_at


@dataclass(frozen=True)
class PipelineConfig:
    costs: CostSpec = CostSpec()
    gamma: GammaSpec = GammaSpec()
    boot: BootstrapConfig = BootstrapConfig()
    delta_band: float = 0.10
    grid_mode: GridMode = GridMode()
    selector: SelectorKind = ERM
    eps_points: int = 64
    smoothing_window: int = 5

    def __post_init__(self) -> None:
        if not 0.0 < self.delta_band < 1.0:
            raise ValueError("delta_band must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class CertifyResult:
    certificate: Certificate
    train_curve: RiskCurve
    val_curve: RiskCurve
    band: ModulusBand
    summary: BootstrapSummary
    instability: InstabilityMap | None
    provenance: dict[str, Any] = field(default_factory=dict)

    def report(self, design_effect: dict | None = None) -> dict[str, Any]:
        s = self.summary
        extra = {
            "bootstrap": {"B": s.B, "b_hat": s.b_hat, "q_radius": s.q_radius, "radius": s.radius},
            "selector": self.provenance.get("selector"),
        }
        return certificate_report(
            self.certificate, design_effect=design_effect, provenance=self.provenance, extra=extra
        )


def split_by_patient(scores: ScoreSet, seed: int, train_fraction: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Seeded random patient split, stratified by label; returns sorted index arrays."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**31 - 1,)))
    train: list[np.ndarray] = []
    for y in (0, 1):
        idx = np.flatnonzero(scores.labels == y)
        idx = idx[rng.permutation(idx.size)]
        train.append(idx[: int(round(train_fraction * idx.size))])
    tr = np.sort(np.concatenate(train))
    va = np.setdiff1d(np.arange(len(scores)), tr)
    return tr, va


def certify(
    train: ScoreSet,
    val: ScoreSet,
    cfg: PipelineConfig = PipelineConfig(),
    external: ScoreSet | None = None,
    provenance: dict[str, Any] | None = None,
    frozen: bool = False,
) -> CertifyResult:
    """Select on ``train``, certify with ``val``, add the shift term when ``external`` is given.

    The grid is built from validation scores; the threshold is chosen from the
    training risk curve only, so validation risks stay honest. With
    ``frozen=True`` the bound omits the shift term even when external data are
    present; the external risk is still reported next to it.
    """
    costs = cfg.costs
    class_cdfs(train)
    class_cdfs(val)
    grid = make_grid(val, cfg.grid_mode)
    train_curve = empirical_risk_curve(train, costs, grid)
    t_hat = select_threshold(train_curve, cfg.selector)
    summary = bootstrap_thresholds(train, costs, grid, cfg.boot, rule(cfg.selector), t_hat=t_hat, keep_risks=True)
    val_curve = empirical_risk_curve(val, costs, grid)

    band = modulus_band(val, costs, cfg.delta_band, default_eps_grid(val.scores, cfg.eps_points))
    g = eval_band(band, summary.radius)
    n1 = int(val.labels.sum())
    gamma = gamma_val(cfg.gamma, len(val), n1, len(val) - n1, n1 / len(val), costs)

    shift = observed = None
    fr_target = val
    if external is not None:
        if not frozen:
            shift = shift_at(t_hat, DomainStats.from_scores(val), DomainStats.from_scores(external), costs)
        observed = empirical_risk(external, costs, t_hat)
        fr_target = external
    fr = flip_rate(fr_target.scores, t_hat, summary.t_star)
    imap = None
    if len(grid) >= 3 and summary.replicate_risks is not None:
        imap = instability_from_risks(grid, summary.replicate_risks, cfg.smoothing_window)

    confidence = {
        "delta_val": cfg.gamma.delta_val,
        "delta_boot": cfg.boot.delta_boot,
        "delta_band": cfg.delta_band,
        "base_level": 1.0 - cfg.gamma.delta_val,
        "augmented_level": max(0.0, 1.0 - cfg.gamma.delta_val - cfg.boot.delta_boot),
    }
    cert = build_certificate(val_curve, t_hat, gamma, g, shift, observed, fr, confidence)
    prov = {
        "selector": str(cfg.selector),
        "grid": str(cfg.grid_mode),
        "grid_source": "validation",
        "costs": [costs.c10, costs.c01],
        "gamma_form": cfg.gamma.form,
        "prevalence_plugin": "empirical",
        "B": cfg.boot.B,
        "seed": cfg.boot.seed,
        "centered_quantile": cfg.boot.centered_quantile,
        "n_train": len(train),
        "n_val": len(val),
        "n_external": len(external) if external is not None else 0,
        "flip_rate_on": "external" if external is not None else "validation",
    }
    prov.update(provenance or {})
    return CertifyResult(cert, train_curve, val_curve, band, summary, imap, prov)

