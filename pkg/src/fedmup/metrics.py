"""Confusion matrix and support-weighted accuracy / precision / recall / F1."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CLASSES = (1, 2, 3)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """counts[i, j] = samples of true class i+1 predicted as class j+1."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64, copy=True)
        if c.shape != (3, 3) or (c < 0).any():
            raise ValueError("confusion matrix must be 3x3 with non-negative counts")
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def one_vs_rest(self, cls: int) -> tuple[int, int, int, int]:
        """(TP, FP, FN, TN) treating `cls` as the positive class."""
        i = cls - 1
        tp = int(self.counts[i, i])
        fp = int(self.counts[:, i].sum()) - tp
        fn = int(self.counts[i, :].sum()) - tp
        return tp, fp, fn, self.total - tp - fp - fn


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: dict[int, ClassScores] | None = None

    def row(self) -> dict[str, float]:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall, "f1": self.f1}


def confusion(true_labels, predicted_labels) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64).ravel()
    p = np.asarray(predicted_labels, dtype=np.int64).ravel()
    if t.size != p.size:
        raise ValueError(f"{t.size} true labels but {p.size} predictions")
    if t.size == 0:
        raise ValueError("need at least one sample")
    if not (np.isin(t, CLASSES).all() and np.isin(p, CLASSES).all()):
        raise ValueError("labels must be 1, 2 or 3")
    counts = np.zeros((3, 3), dtype=np.int64)
    np.add.at(counts, (t - 1, p - 1), 1)
    return ConfusionMatrix(counts)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def report(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class one-vs-rest scores, averaged with true-class support weights.

    Precision or recall with an empty denominator counts as 0. Accuracy is
    trace / total, which equals the support-weighted recall.
    """
    total = cm.total
    if total == 0:
        raise ValueError("empty confusion matrix")
    per_class = {}
    for c in CLASSES:
        tp, fp, fn, _ = cm.one_vs_rest(c)
        prec = _ratio(tp, tp + fp)
        rec = _ratio(tp, tp + fn)
        f1 = _ratio(2 * prec * rec, prec + rec)
        per_class[c] = ClassScores(prec, rec, f1, tp + fn)
    correct = int(np.trace(cm.counts))
    return MetricsReport(
        accuracy=correct / total,
        precision=sum(s.support * s.precision for s in per_class.values()) / total,
        # support * (tp / support) is tp; summing tp directly keeps this bitwise equal to accuracy
        recall=correct / total,
        f1=sum(s.support * s.f1 for s in per_class.values()) / total,
        per_class=per_class,
    )


def evaluate(true_labels, predicted_labels) -> MetricsReport:
    return report(confusion(true_labels, predicted_labels))
