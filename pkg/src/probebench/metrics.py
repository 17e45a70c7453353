"""Evaluation metrics: one-vs-rest ROC-AUC, macro average, top-1, confusions.

AUC uses the Mann-Whitney rank form: P(score+ > score-) + 0.5 P(score+ = score-),
so ties count a half.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from math import log

import numpy as np

LOG_ODDS_EPS = 1e-6

METRICS_CSV_HEADER = "model,dataset,top1,auc"


class DegenerateLabelsError(ValueError):
    """Label set contains only one class, so AUC is undefined."""


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    n = len(values)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(n, dtype=np.float64)
    sorted_values = values[order]
    boundaries = np.flatnonzero(np.diff(sorted_values) != 0) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [n]])
    group_ranks = (starts + ends + 1) / 2.0  # mean of 1-based positions
    ranks[order] = np.repeat(group_ranks, ends - starts)
    return ranks


def roc_auc_binary(scores, labels) -> float:
    """One-vs-rest ROC-AUC over binary labels, O(n log n) via rank statistics."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    positive = labels.astype(bool)
    n_pos = int(positive.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError(
            f"need both classes present, got {n_pos} positives / {n_neg} negatives"
        )
    ranks = _midranks(scores)
    rank_sum = ranks[positive].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def macro_auc(score_matrix, true_labels, classes) -> tuple[dict[str, float], float]:
    """Per-class one-vs-rest AUC plus the macro mean.

    Classes with no eval positives (or no negatives) are left out of the map
    and the mean; if every class is degenerate that is an error.
    """
    score_matrix = np.asarray(score_matrix, dtype=np.float64)
    classes = list(classes)
    if score_matrix.ndim != 2 or score_matrix.shape[1] != len(classes):
        raise ValueError("score matrix must have one column per class")
    true_labels = list(true_labels)
    if len(true_labels) != score_matrix.shape[0]:
        raise ValueError("one true label per score row required")
    per_class: dict[str, float] = {}
    for column, cls in enumerate(classes):
        binary = np.asarray([label == cls for label in true_labels])
        if binary.all() or not binary.any():
            continue
        per_class[cls] = roc_auc_binary(score_matrix[:, column], binary)
    if not per_class:
        raise DegenerateLabelsError("every class is degenerate in this eval set")
    return per_class, float(np.mean(list(per_class.values())))


def top1_accuracy(score_matrix, true_labels, classes) -> float:
    """Fraction of rows whose argmax column is the true class; ties go to the lowest index."""
    score_matrix = np.asarray(score_matrix, dtype=np.float64)
    classes = list(classes)
    if score_matrix.shape[0] == 0:
        raise ValueError("empty eval set")
    index = {cls: i for i, cls in enumerate(classes)}
    truth = np.asarray([index[label] for label in true_labels])
    predicted = np.argmax(score_matrix, axis=1)  # first maximum wins ties
    return float(np.mean(predicted == truth))


def confusion_matrix(score_matrix, true_labels, classes) -> np.ndarray:
    """C x C counts, rows = true class, columns = predicted class."""
    score_matrix = np.asarray(score_matrix, dtype=np.float64)
    classes = list(classes)
    index = {cls: i for i, cls in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    predicted = np.argmax(score_matrix, axis=1)
    for label, pred in zip(true_labels, predicted):
        counts[index[label], pred] += 1
    return counts


def top_confusions(confusion, class_names, m: int) -> list[tuple[str, str, float]]:
    """Largest off-diagonal rates (count / true-class row sum), top m."""
    confusion = np.asarray(confusion)
    class_names = list(class_names)
    rows = confusion.sum(axis=1)
    entries = []
    for i, true_class in enumerate(class_names):
        if rows[i] == 0:
            continue
        for j, predicted_class in enumerate(class_names):
            if i == j or confusion[i, j] == 0:
                continue
            entries.append((true_class, predicted_class, confusion[i, j] / rows[i]))
    entries.sort(key=lambda e: (-e[2], e[0], e[1]))
    return entries[:m]


def log_odds(p: float) -> float:
    """ln(p / (1-p)); exact 0 and 1 clamp to the eps = 1e-6 bound."""
    if not 0.0 <= p <= 1.0:  # also rejects NaN
        raise ValueError(f"p must lie in [0, 1], got {p}")
    bound = log((1.0 - LOG_ODDS_EPS) / LOG_ODDS_EPS)
    if p == 0.0:
        return -bound
    if p == 1.0:
        return bound
    return log(p / (1.0 - p))


def log_odds_clamped(p: float) -> bool:
    """True when log_odds(p) had to clamp (p was exactly 0 or 1)."""
    return p == 0.0 or p == 1.0


@dataclass(frozen=True)
class MetricsReport:
    """All evaluation outputs for one trained probe on one eval set."""

    classes: tuple[str, ...]
    per_class_auc: dict[str, float]
    macro_auc: float
    top1: float
    confusion: np.ndarray
    n_eval: int

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "per_class_auc": {c: self.per_class_auc[c] for c in sorted(self.per_class_auc)},
            "macro_auc": self.macro_auc,
            "top1": self.top1,
            "confusion": [[int(v) for v in row] for row in self.confusion],
            "n_eval": self.n_eval,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, payload: dict) -> "MetricsReport":
        return cls(
            classes=tuple(payload["classes"]),
            per_class_auc=dict(payload["per_class_auc"]),
            macro_auc=payload["macro_auc"],
            top1=payload["top1"],
            confusion=np.asarray(payload["confusion"], dtype=np.int64),
            n_eval=payload["n_eval"],
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))

    def to_csv_row(self, model: str, dataset: str) -> str:
        return f"{model},{dataset},{self.top1:.6f},{self.macro_auc:.6f}"


def metrics_report(score_matrix, true_labels, classes) -> MetricsReport:
    """Assemble the full report from one score matrix."""
    classes = tuple(classes)
    true_labels = list(true_labels)
    per_class, macro = macro_auc(score_matrix, true_labels, classes)
    return MetricsReport(
        classes=classes,
        per_class_auc=per_class,
        macro_auc=macro,
        top1=top1_accuracy(score_matrix, true_labels, classes),
        confusion=confusion_matrix(score_matrix, true_labels, classes),
        n_eval=len(true_labels),
    )
