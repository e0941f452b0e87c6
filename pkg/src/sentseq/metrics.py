"""Evaluation: confusion matrices, per-class F1, weighted F1, accuracy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMatrix, LengthMismatch


def confusion(gold, pred, n_labels: int) -> np.ndarray:
    """Counts matrix with rows = gold, columns = predicted."""
    gold = np.asarray(gold, dtype=np.intp)
    pred = np.asarray(pred, dtype=np.intp)
    if gold.shape != pred.shape:
        raise LengthMismatch(f"{gold.shape[0]} gold vs {pred.shape[0]} predicted")
    cm = np.zeros((n_labels, n_labels), dtype=np.int64)
    np.add.at(cm, (gold, pred), 1)
    return cm


@dataclass(frozen=True)
class MetricsReport:
    per_class_f1: tuple[float, ...]
    weighted_f1: float
    accuracy: float
    support: tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "per_class_f1": list(self.per_class_f1),
            "weighted_f1": self.weighted_f1,
            "accuracy": self.accuracy,
            "support": list(self.support),
        }


def report(cm: np.ndarray) -> MetricsReport:
    """Summarise a confusion matrix.

    Per-class F1 is 2PR/(P+R), defined as 0 whenever P+R is 0; weighted F1
    weights each class by its share of the gold sentences.
    """
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    if total == 0:
        raise EmptyMatrix("confusion matrix has no counts")
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    tp = np.diag(cm)
    f1 = np.zeros(cm.shape[0])
    for i in range(cm.shape[0]):
        denom = support[i] + predicted[i]  # == (TP+FN) + (TP+FP)
        if denom > 0:
            f1[i] = 2.0 * tp[i] / denom
    weighted = float((support / total * f1).sum())
    accuracy = float(tp.sum() / total)
    return MetricsReport(tuple(float(x) for x in f1), weighted, accuracy,
                         tuple(int(s) for s in support))


def evaluate_predictions(gold_seqs, pred_seqs, n_labels: int) -> MetricsReport:
    """Flatten per-document label sequences and score them."""
    gold = [y for seq in gold_seqs for y in seq]
    pred = [y for seq in pred_seqs for y in seq]
    return report(confusion(gold, pred, n_labels))
