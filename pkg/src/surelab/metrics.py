"""Failure-prediction metrics.

Correct predictions are the positive class throughout. Confidences are
sorted descending with ties kept in original order.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from . import autodiff as ad
from . import kernels


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class EvalRecord:
    confidence: float
    predicted: int
    true_label: int

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise MetricError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def correct(self) -> bool:
        return self.predicted == self.true_label


@dataclass(frozen=True)
class RiskCoverageCurve:
    coverage: np.ndarray
    risk: np.ndarray

    def __len__(self) -> int:
        return len(self.coverage)

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.coverage.tolist(), self.risk.tolist()))


@dataclass
class MetricReport:
    accuracy: float
    aurc: float
    auroc: float
    fpr95: float

    @property
    def aurc_x1000(self) -> float:
        return self.aurc * 1e3

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


Records = Union[Sequence[EvalRecord], "RecordArrays"]


@dataclass(frozen=True)
class RecordArrays:
    """Columnar form of a record sequence."""

    confidence: np.ndarray
    predicted: np.ndarray
    true_label: np.ndarray

    @property
    def correct(self) -> np.ndarray:
        return self.predicted == self.true_label

    def __len__(self) -> int:
        return len(self.confidence)

    @classmethod
    def from_records(cls, records: Iterable[EvalRecord]) -> "RecordArrays":
        records = list(records)
        return cls(
            np.array([r.confidence for r in records], dtype=np.float64),
            np.array([r.predicted for r in records], dtype=np.int64),
            np.array([r.true_label for r in records], dtype=np.int64),
        )

    def to_records(self) -> list[EvalRecord]:
        return [
            EvalRecord(float(c), int(p), int(t))
            for c, p, t in zip(self.confidence, self.predicted, self.true_label)
        ]


def _columns(records) -> RecordArrays:
    if isinstance(records, RecordArrays):
        return records
    return RecordArrays.from_records(records)


def msp_confidence(logits) -> float:
    """Maximum softmax probability of one logit vector."""
    z = np.asarray(ad.as_tensor(logits).data, dtype=np.float64)
    if z.ndim != 1 or z.size < 2:
        raise MetricError("msp_confidence needs a logit vector with K >= 2")
    return float(ad.softmax(z).data.max())


def records_from_probs(probs: np.ndarray, labels: np.ndarray) -> RecordArrays:
    """MSP records for a batch of class-probability rows."""
    probs = np.asarray(probs, dtype=np.float64)
    return RecordArrays(
        np.clip(probs.max(axis=1), 0.0, 1.0),
        probs.argmax(axis=1).astype(np.int64),
        np.asarray(labels, dtype=np.int64),
    )


def _descending_order(conf: np.ndarray) -> np.ndarray:
    return np.argsort(-conf, kind="stable")


def risk_coverage_curve(records: Records) -> RiskCoverageCurve:
    r = _columns(records)
    n = len(r)
    if n == 0:
        raise MetricError("risk-coverage curve of an empty record set")
    order = _descending_order(r.confidence)
    incorrect = (~r.correct[order]).astype(np.float64)
    risk = kernels.selective_risks(incorrect)
    coverage = np.arange(1, n + 1, dtype=np.float64) / n
    return RiskCoverageCurve(coverage, np.asarray(risk))


def aurc(curve: Union[RiskCoverageCurve, Records]) -> float:
    """Mean selective risk over the n coverage points."""
    if not isinstance(curve, RiskCoverageCurve):
        curve = risk_coverage_curve(curve)
    return float(np.mean(curve.risk))


def _require_both_classes(correct: np.ndarray) -> None:
    if correct.all() or not correct.any():
        raise MetricError("metric undefined without both correct and incorrect records")


def auroc(records: Records) -> float:
    r = _columns(records)
    correct = r.correct
    _require_both_classes(correct)
    order = np.argsort(r.confidence, kind="stable")
    return kernels.auroc_sorted(r.confidence[order], correct[order])


def fpr_at_95_tpr(records: Records, tpr: float = 0.95) -> float:
    r = _columns(records)
    correct = r.correct
    _require_both_classes(correct)
    order = _descending_order(r.confidence)
    return kernels.fpr_at_tpr_sorted(r.confidence[order], correct[order], tpr)


def accuracy(records: Records) -> float:
    r = _columns(records)
    if len(r) == 0:
        raise MetricError("accuracy of an empty record set")
    return float(np.mean(r.correct))


def evaluate_records(records: Records) -> MetricReport:
    """All four metrics; AUROC/FPR95 fall back to NaN for single-class sets."""
    r = _columns(records)
    acc = accuracy(r)
    area = aurc(r)
    try:
        roc = auroc(r)
        fpr = fpr_at_95_tpr(r)
    except MetricError:
        roc = fpr = float("nan")
    return MetricReport(acc, area, roc, fpr)


def balanced_accuracy(predicted: np.ndarray, labels: np.ndarray, num_classes: int) -> float:
    """Mean per-class recall over classes present in ``labels``."""
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    recalls = [
        np.mean(predicted[labels == k] == k) for k in range(num_classes) if np.any(labels == k)
    ]
    return float(np.mean(recalls))


# -- prediction dumps ----------------------------------------------------------


def read_prediction_dump(path: Union[str, Path]) -> RecordArrays:
    """Parse ``confidence,predicted,true_label`` lines (header optional)."""
    conf, pred, true = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if lineno == 1 and parts[0] == "confidence":
                continue
            if len(parts) != 3:
                raise MetricError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            try:
                c, p, t = float(parts[0]), int(parts[1]), int(parts[2])
            except ValueError:
                raise MetricError(f"{path}:{lineno}: malformed record {line!r}") from None
            if not 0.0 <= c <= 1.0:
                raise MetricError(f"{path}:{lineno}: confidence {c} outside [0, 1]")
            conf.append(c)
            pred.append(p)
            true.append(t)
    return RecordArrays(np.array(conf), np.array(pred, dtype=np.int64), np.array(true, dtype=np.int64))


def write_prediction_dump(records: Records, path: Union[str, Path]) -> Path:
    r = _columns(records)
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("confidence,predicted,true_label\n")
        for c, p, t in zip(r.confidence, r.predicted, r.true_label):
            fh.write(f"{float(c)!r},{int(p)},{int(t)}\n")
    return path
