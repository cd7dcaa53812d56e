"""External-risk certificate at the realized threshold, and its JSON report."""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .data_model import CostSpec, PatientScore, ScoreSet, as_score_set
from .empirical import RiskCurve, class_cdfs, empirical_risk
from .shift import ShiftReport

COMPONENTS = ("val_risk", "gamma_val", "shift", "g_boot")


@dataclass(frozen=True)
class Contribution:
    name: str
    value: float
    percent: float


@dataclass(frozen=True)
class Certificate:
    t_hat: float
    val_risk: float
    gamma_val: float
    g_boot: float
    base_bound: float
    augmented_bound: float
    mode: str  # "P-frozen" or "PQ"
    shift: ShiftReport | None = None
    external_risk_observed: float | None = None
    flip_rate: float | None = None
    contributions: tuple[Contribution, ...] = ()
    confidence: dict[str, float] = field(default_factory=dict)

    @property
    def shift_term(self) -> float:
        return self.shift.shift_weighted if self.shift is not None else 0.0

    @property
    def holds(self) -> bool | None:
        if self.external_risk_observed is None:
            return None
        return self.external_risk_observed <= self.augmented_bound


def contributions(values: dict[str, float]) -> tuple[Contribution, ...]:
    total = math.fsum(values.values())
    return tuple(
        Contribution(name, v, 100.0 * v / total if total > 0 else 0.0) for name, v in values.items()
    )


def build_certificate(
    curve: RiskCurve,
    t_hat: float,
    gamma: float,
    g_boot: float,
    shift: ShiftReport | None = None,
    observed_external_risk: float | None = None,
    flip_rate: float | None = None,
    confidence: dict[str, float] | None = None,
) -> Certificate:
    """Assemble the base and augmented bounds at ``t_hat`` (which must lie on the curve's grid).

    Without a shift report the certificate is in P-frozen mode and the shift
    term is zero.
    """
    i = curve.grid.index_of(t_hat)
    val_risk = float(curve.risks[i])
    if gamma < 0 or g_boot < 0:
        raise ValueError("bound components must be nonnegative")
    shift_term = shift.shift_weighted if shift is not None else 0.0
    base = val_risk + gamma + shift_term
    augmented = base + g_boot
    parts = contributions({"val_risk": val_risk, "gamma_val": gamma, "shift": shift_term, "g_boot": g_boot})
    return Certificate(
        t_hat=float(t_hat),
        val_risk=val_risk,
        gamma_val=float(gamma),
        g_boot=float(g_boot),
        base_bound=base,
        augmented_bound=augmented,
        mode="PQ" if shift is not None else "P-frozen",
        shift=shift,
        external_risk_observed=observed_external_risk,
        flip_rate=flip_rate,
        contributions=parts,
        confidence=dict(confidence or {}),
    )


@dataclass(frozen=True)
class ValidationOutcome:
    observed: float
    holds: bool
    slack: float


def validate_certificate(
    cert: Certificate, q_scores: ScoreSet | Sequence[PatientScore], costs: CostSpec
) -> ValidationOutcome:
    """Compare the augmented bound with the empirical external risk at ``t_hat``.

    A violation is reported as data (negative slack), never raised.
    """
    ss = as_score_set(q_scores)
    class_cdfs(ss)  # both classes required
    observed = empirical_risk(ss, costs, cert.t_hat)
    return ValidationOutcome(observed, observed <= cert.augmented_bound, cert.augmented_bound - observed)


def certificate_report(
    cert: Certificate,
    *,
    design_effect: dict | None = None,
    provenance: dict[str, Any] | None = None,
    extra: dict[str, Any] | None = None,
) -> dict[str, Any]:
    """Stable-key report dictionary for JSON export."""
    report: dict[str, Any] = {
        "t_hat": cert.t_hat,
        "mode": cert.mode,
        "components": {
            "val_risk": cert.val_risk,
            "gamma_val": cert.gamma_val,
            "shift": cert.shift_term,
            "g_boot": cert.g_boot,
        },
        "bounds": {"base": cert.base_bound, "augmented": cert.augmented_bound},
        "contributions": {c.name: {"value": c.value, "percent": c.percent} for c in cert.contributions},
        "diagnostics": {
            "flip_rate": cert.flip_rate,
            "shift_report": cert.shift.as_dict() if cert.shift is not None else None,
            "design_effect": design_effect,
        },
        "external": {
            "observed_risk": cert.external_risk_observed,
            "holds": cert.holds,
        },
        "confidence": dict(cert.confidence),
        "provenance": dict(provenance or {}),
    }
    if extra:
        report.update(extra)
    return report


def _encode(obj: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return "null"
        text = format(obj, ".17g")
        # keep reals recognizable as reals
        return text if any(c in text for c in ".en") else text + ".0"
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}{_encode(v, indent, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if hasattr(obj, "item"):  # numpy scalar
        return _encode(obj.item(), indent, level)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_report(report: dict[str, Any], indent: int = 2) -> str:
    """JSON text with every real written to 17 significant digits."""
    return _encode(report, indent, 0) + "\n"


def write_report(report: dict[str, Any], path: str | Path) -> None:
    Path(path).write_text(dumps_report(report), encoding="utf-8")
