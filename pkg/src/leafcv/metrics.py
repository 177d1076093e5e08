"""Confusion matrices and accuracy / precision / recall / F1 reports.

Averages are macro (unweighted over classes). A 0/0 ratio is reported as 0
and the class is listed under ``degenerate`` for that metric.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import EmptyMatrix, LabelOutOfRange, LengthMismatch


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray  # (K, K) int64; rows = true class, cols = predicted

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or np.any(c < 0):
            raise ValueError("confusion counts must be a square non-negative matrix")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.k != other.k:
            raise LengthMismatch("cannot merge confusion matrices of different class counts")
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    @classmethod
    def zeros(cls, k: int) -> "ConfusionMatrix":
        return cls(np.zeros((k, k), dtype=np.int64))

    def tolist(self) -> list[list[int]]:
        return self.counts.tolist()


def confusion(true_labels, predicted_labels, k: int) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64).ravel()
    p = np.asarray(predicted_labels, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise LengthMismatch(f"{t.size} true labels vs {p.size} predictions")
    for name, arr in (("true", t), ("predicted", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise LabelOutOfRange(f"{name} label outside [0, {k})")
    counts = np.bincount(t * k + p, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts)


def _ratio(num: int, den: int) -> Fraction:
    return Fraction(num, den) if den else Fraction(0)


def _mean(values: list[Fraction]) -> float:
    return float(sum(values, Fraction(0)) / len(values))


@dataclass
class MetricReport:
    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_f1: float
    degenerate: dict = field(default_factory=dict)
    averaging: str = "macro"

    def to_dict(self) -> dict:
        return {
            "averaging": self.averaging,
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "per_class": {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                          "support": self.support},
            "degenerate": self.degenerate,
        }


def report(cm: ConfusionMatrix) -> MetricReport:
    """Compute all metrics in exact rational arithmetic, rounding once to float."""
    total = cm.total
    if total == 0:
        raise EmptyMatrix("confusion matrix holds no samples")
    c = cm.counts.tolist()
    k = cm.k
    tp = [c[i][i] for i in range(k)]
    col = [sum(c[r][i] for r in range(k)) for i in range(k)]
    row = [sum(c[i]) for i in range(k)]
    precision = [_ratio(tp[i], col[i]) for i in range(k)]
    recall = [_ratio(tp[i], row[i]) for i in range(k)]
    f1 = []
    for p, r in zip(precision, recall):
        f1.append(2 * p * r / (p + r) if p + r else Fraction(0))
    accuracy = Fraction(sum(tp), total)
    # single-label: micro precision = micro recall = trace / total
    micro = Fraction(sum(tp), sum(col))
    micro_f1 = 2 * micro * micro / (micro + micro) if micro else Fraction(0)
    degenerate = {
        "precision": [i for i in range(k) if col[i] == 0],
        "recall": [i for i in range(k) if row[i] == 0],
        "f1": [i for i in range(k) if precision[i] + recall[i] == 0],
    }
    return MetricReport(
        accuracy=float(accuracy),
        precision=[float(v) for v in precision],
        recall=[float(v) for v in recall],
        f1=[float(v) for v in f1],
        support=row,
        macro_precision=_mean(precision),
        macro_recall=_mean(recall),
        macro_f1=_mean(f1),
        micro_f1=float(micro_f1),
        degenerate={name: ids for name, ids in degenerate.items() if ids},
    )
