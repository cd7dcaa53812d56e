"""Core domain types, cohort ingestion and patient-level aggregation."""

from __future__ import annotations

import csv
import enum
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import TextIO

import numpy as np


class CohortError(ValueError):
    """Raised for malformed cohort input (bad rows, labels, empty files)."""


class Domain(str, enum.Enum):
    INTERNAL = "P"
    EXTERNAL = "Q"


def _frozen_array(values: Iterable[float]) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True).ravel()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Patient:
    id: str
    label: int
    instances: np.ndarray

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise CohortError(f"patient {self.id!r}: label must be 0 or 1, got {self.label!r}")
        arr = _frozen_array(self.instances)
        if arr.size == 0:
            raise CohortError(f"patient {self.id!r} has no instances")
        if not np.all(np.isfinite(arr)):
            raise CohortError(f"patient {self.id!r} has non-finite instance scores")
        object.__setattr__(self, "instances", arr)


@dataclass(frozen=True, eq=False)
class Cohort:
    patients: tuple[Patient, ...]
    domain: Domain = Domain.INTERNAL

    def __post_init__(self) -> None:
        object.__setattr__(self, "patients", tuple(self.patients))
        object.__setattr__(self, "domain", Domain(self.domain))
        ids = [p.id for p in self.patients]
        if len(set(ids)) != len(ids):
            raise CohortError("patient ids must be unique")

    def __len__(self) -> int:
        return len(self.patients)

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self.patients], dtype=int)

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.patients]

    def subset(self, indices: Sequence[int]) -> Cohort:
        return Cohort(tuple(self.patients[i] for i in indices), self.domain)


@dataclass(frozen=True)
class Aggregator:
    """Patient-level aggregation rule.

    ``kind`` is one of ``"mean"``, ``"quantile"``, ``"max"`` or ``"topk"``;
    ``param`` carries ``q`` for quantile and ``k`` for top-k.
    """

    kind: str
    param: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("mean", "quantile", "max", "topk"):
            raise ValueError(f"unknown aggregator kind {self.kind!r}")
        if self.kind == "quantile":
            if self.param is None or not 0.0 < float(self.param) < 1.0:
                raise ValueError("quantile aggregator needs q strictly in (0, 1)")
        elif self.kind == "topk":
            if self.param is None or int(self.param) != self.param or self.param < 1:
                raise ValueError("top-k aggregator needs an integer k >= 1")
            object.__setattr__(self, "param", int(self.param))
        elif self.param is not None:
            raise ValueError(f"{self.kind} aggregator takes no parameter")

    @classmethod
    def parse(cls, text: str) -> Aggregator:
        """Parse ``mean``, ``max``, ``quantile:q`` or ``topk:k``."""
        name, _, arg = text.strip().lower().partition(":")
        if name in ("mean", "max"):
            if arg:
                raise ValueError(f"{name} aggregator takes no parameter")
            return cls(name)
        if name == "quantile":
            return cls("quantile", float(arg))
        if name in ("topk", "top-k"):
            return cls("topk", int(arg))
        raise ValueError(f"cannot parse aggregator {text!r}")

    def __str__(self) -> str:
        if self.kind == "quantile":
            return f"quantile:{self.param:g}"
        if self.kind == "topk":
            return f"topk:{self.param}"
        return self.kind

    def apply(self, values: np.ndarray) -> float:
        return float(self.apply_rows(np.asarray(values, dtype=float)[None, :])[0])

    def apply_rows(self, matrix: np.ndarray) -> np.ndarray:
        """Aggregate each row of a (patients x instances) matrix."""
        m = matrix.shape[1]
        if self.kind == "mean":
            return matrix.mean(axis=1)
        if self.kind == "max":
            return matrix.max(axis=1)
        if self.kind == "quantile":
            idx = order_statistic_index(float(self.param), m)
            return np.partition(matrix, idx, axis=1)[:, idx]
        k = min(int(self.param), m)
        if k == m:
            return matrix.mean(axis=1)
        return np.partition(matrix, m - k, axis=1)[:, m - k:].mean(axis=1)


def order_statistic_index(q: float, m: int) -> int:
    """Zero-based index of the lower-interpolation order statistic ``ceil(q*m)``."""
    # rounding guards against q*m landing one ulp above an integer (0.7*10)
    return min(max(math.ceil(round(q * m, 9)), 1), m) - 1


@dataclass(frozen=True)
class CostSpec:
    c10: float = 1.0  # false negative
    c01: float = 1.0  # false positive

    def __post_init__(self) -> None:
        if self.c10 < 0 or self.c01 < 0 or not (self.c10 + self.c01) > 0:
            raise ValueError("costs must be nonnegative with c10 + c01 > 0")

    @classmethod
    def parse(cls, text: str) -> CostSpec:
        parts = text.split(",")
        if len(parts) != 2:
            raise ValueError(f"costs must look like 'c10,c01', got {text!r}")
        return cls(float(parts[0]), float(parts[1]))


@dataclass(frozen=True)
class PatientScore:
    patient_id: str
    label: int
    s: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.s):
            raise ValueError(f"patient {self.patient_id!r}: aggregated score is not finite")


@dataclass(frozen=True, eq=False)
class ScoreSet:
    """Array view of a list of patient scores; the numeric workhorse."""

    labels: np.ndarray
    scores: np.ndarray
    ids: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=int).ravel()
        scores = np.asarray(self.scores, dtype=float).ravel()
        if labels.shape != scores.shape:
            raise ValueError("labels and scores must have the same length")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return self.scores.size

    @classmethod
    def from_scores(cls, scores: Sequence[PatientScore]) -> ScoreSet:
        return cls(
            np.array([p.label for p in scores], dtype=int),
            np.array([p.s for p in scores], dtype=float),
            tuple(p.patient_id for p in scores),
        )

    def to_scores(self) -> list[PatientScore]:
        ids = self.ids or tuple(f"p{i}" for i in range(len(self)))
        return [PatientScore(i, int(y), float(s)) for i, y, s in zip(ids, self.labels, self.scores)]

    def subset(self, indices: np.ndarray) -> ScoreSet:
        ids = tuple(self.ids[i] for i in indices) if self.ids else ()
        return ScoreSet(self.labels[indices], self.scores[indices], ids)


def as_score_set(scores: ScoreSet | Sequence[PatientScore]) -> ScoreSet:
    if isinstance(scores, ScoreSet):
        return scores
    return ScoreSet.from_scores(scores)


def aggregate(cohort: Cohort, agg: Aggregator) -> list[PatientScore]:
    return [PatientScore(p.id, p.label, agg.apply(p.instances)) for p in cohort.patients]


def ingest_cohort(path: str | Path, domain: Domain | str = Domain.INTERNAL) -> Cohort:
    """Read a ``patient_id,label,instance_score`` CSV into a cohort.

    Row numbers in error messages count the header as row 1.
    """
    path = Path(path)
    labels: dict[str, int] = {}
    values: dict[str, list[float]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CohortError(f"{path}: empty file")
        if [h.strip() for h in header] != ["patient_id", "label", "instance_score"]:
            raise CohortError(
                f"{path}: header must be 'patient_id,label,instance_score', got {','.join(header)!r}"
            )
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise CohortError(f"{path}: malformed row at row {rownum}: expected 3 fields")
            pid, raw_label, raw_score = (c.strip() for c in row)
            if not pid:
                raise CohortError(f"{path}: empty patient_id at row {rownum}")
            if raw_label not in ("0", "1"):
                raise CohortError(f"{path}: non-binary label at row {rownum}: {raw_label!r}")
            try:
                score = float(raw_score)
            except ValueError:
                raise CohortError(f"{path}: malformed score at row {rownum}: {raw_score!r}") from None
            if not math.isfinite(score):
                raise CohortError(f"{path}: non-finite score at row {rownum}")
            label = int(raw_label)
            if labels.setdefault(pid, label) != label:
                raise CohortError(f"{path}: conflicting labels for patient {pid!r} at row {rownum}")
            values.setdefault(pid, []).append(score)
    if not values:
        raise CohortError(f"{path}: empty file (no data rows)")
    patients = tuple(Patient(pid, labels[pid], np.array(v)) for pid, v in values.items())
    return Cohort(patients, Domain(domain))


def write_cohort(cohort: Cohort, path: str | Path | TextIO) -> None:
    """Write the standard cohort CSV to a path or an open text stream."""
    if hasattr(path, "write"):
        _write_rows(cohort, path)
        return
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        _write_rows(cohort, fh)


def _write_rows(cohort: Cohort, fh: TextIO) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["patient_id", "label", "instance_score"])
    for p in cohort.patients:
        for v in p.instances:
            writer.writerow([p.id, p.label, repr(float(v))])
