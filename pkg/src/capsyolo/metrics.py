"""Confusion matrix and the evaluation ratios derived from it.

All ratios are computed per class in one-vs-rest form from that class's
TP/TN/FP/FN counts:

    accuracy  = (TP + TN) / (TP + TN + FP + FN)
    precision = TP / (TP + FP)
    recall    = TP / (TP + FN)          (the detection rate)
    far       = FP / (FP + TN)          (false alarm / false positive rate)

A ratio whose denominator is zero is reported as ``None`` rather than 0,
so "never predicted and never present" does not masquerade as a score.
Macro averages skip the undefined entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ConfusionMatrix:
    """K x K counts; rows are true classes, columns are predictions."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.int64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {self.matrix.shape}")
        if (self.matrix < 0).any():
            raise ValueError("confusion matrix counts must be non-negative")

    @property
    def num_classes(self) -> int:
        return self.matrix.shape[0]

    @property
    def total(self) -> int:
        return int(self.matrix.sum())


def confusion(true_labels, predicted_labels, num_classes: int) -> ConfusionMatrix:
    """Count (true, predicted) pairs into a K x K matrix."""
    true_labels = np.asarray(true_labels)
    predicted_labels = np.asarray(predicted_labels)
    if true_labels.shape != predicted_labels.shape:
        raise ValueError("label sequences must have equal length")
    if true_labels.size and (
        true_labels.min() < 0 or true_labels.max() >= num_classes
        or predicted_labels.min() < 0 or predicted_labels.max() >= num_classes
    ):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        matrix[int(t), int(p)] += 1
    return ConfusionMatrix(matrix)


def _ratio(num: int, den: int):
    return num / den if den else None


@dataclass(frozen=True)
class ClassMetrics:
    """One-vs-rest counts and ratios for a single class."""

    tp: int
    tn: int
    fp: int
    fn: int
    accuracy: float | None = field(init=False)
    precision: float | None = field(init=False)
    recall: float | None = field(init=False)
    f1: float | None = field(init=False)
    false_alarm_rate: float | None = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "accuracy", _ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn))
        object.__setattr__(self, "precision", _ratio(self.tp, self.tp + self.fp))
        object.__setattr__(self, "recall", _ratio(self.tp, self.tp + self.fn))
        object.__setattr__(self, "false_alarm_rate", _ratio(self.fp, self.fp + self.tn))
        if self.precision is not None and self.recall is not None and (self.precision + self.recall) > 0:
            f1 = 2 * self.precision * self.recall / (self.precision + self.recall)
        elif self.precision is not None and self.recall is not None:
            f1 = 0.0
        else:
            f1 = None
        object.__setattr__(self, "f1", f1)


@dataclass(frozen=True)
class MetricsReport:
    """Per-class metrics plus macro averages and plain classification accuracy."""

    per_class: tuple
    accuracy: float | None
    precision: float | None
    recall: float | None
    f1: float | None
    false_alarm_rate: float | None
    overall_accuracy: float

    def to_dict(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "macro": {
                "accuracy": self.accuracy,
                "precision": self.precision,
                "recall": self.recall,
                "f1": self.f1,
                "false_alarm_rate": self.false_alarm_rate,
            },
            "per_class": [
                {
                    "tp": m.tp, "tn": m.tn, "fp": m.fp, "fn": m.fn,
                    "accuracy": m.accuracy, "precision": m.precision,
                    "recall": m.recall, "f1": m.f1,
                    "false_alarm_rate": m.false_alarm_rate,
                }
                for m in self.per_class
            ],
        }


def _macro(values):
    defined = [v for v in values if v is not None]
    return sum(defined) / len(defined) if defined else None


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Evaluate the ratios above for every class and macro-average them."""
    if cm.total == 0:
        raise ValueError("cannot compute metrics on an empty confusion matrix")
    m = cm.matrix
    per_class = []
    for k in range(cm.num_classes):
        tp = int(m[k, k])
        fn = int(m[k].sum() - tp)
        fp = int(m[:, k].sum() - tp)
        tn = int(cm.total - tp - fn - fp)
        per_class.append(ClassMetrics(tp=tp, tn=tn, fp=fp, fn=fn))
    return MetricsReport(
        per_class=tuple(per_class),
        accuracy=_macro([c.accuracy for c in per_class]),
        precision=_macro([c.precision for c in per_class]),
        recall=_macro([c.recall for c in per_class]),
        f1=_macro([c.f1 for c in per_class]),
        false_alarm_rate=_macro([c.false_alarm_rate for c in per_class]),
        overall_accuracy=float(np.trace(m)) / cm.total,
    )
