"""Metrics and evaluation reports for the hierarchical classifier.

Macro F1 averages per-class F1 over the classes that actually occur in the
predictions or the labels; a class absent from both is excluded rather than
counted as a free zero. The one-vs-rest ROC AUC is computed per class with
the rank statistic (tied scores share credit) and macro-averaged over the
classes present in the labels.

Synthetic (oversampled) windows never enter evaluation: they are filtered
out before any metric is computed.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ActivityTaxonomy
from .dataset import FeatureWindow
from .model import ModelParams, predict, windows_to_arrays

TREND_HEADER = ("width", "split", "metric", "value")


class UndefinedMetricError(ValueError):
    """The metric has no defined value for this input (e.g. one-class AUC)."""


def accuracy(preds: Sequence[int], labels: Sequence[int]) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.size == 0:
        raise ValueError("predictions and labels must be equal-length and non-empty")
    return float((preds == labels).mean())


def _class_counts(preds: np.ndarray, labels: np.ndarray, n_classes: int):
    tp = np.zeros(n_classes)
    fp = np.zeros(n_classes)
    fn = np.zeros(n_classes)
    for c in range(n_classes):
        tp[c] = np.sum((preds == c) & (labels == c))
        fp[c] = np.sum((preds == c) & (labels != c))
        fn[c] = np.sum((preds != c) & (labels == c))
    return tp, fp, fn


def precision_recall_f1(
    preds: Sequence[int], labels: Sequence[int], n_classes: int
) -> list[dict]:
    """Per-class precision/recall/F1 with 0/0 ratios defined as 0."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    tp, fp, fn = _class_counts(preds, labels, n_classes)
    out = []
    for c in range(n_classes):
        precision = tp[c] / (tp[c] + fp[c]) if tp[c] + fp[c] > 0 else 0.0
        recall = tp[c] / (tp[c] + fn[c]) if tp[c] + fn[c] > 0 else 0.0
        f1 = (
            2 * precision * recall / (precision + recall)
            if precision + recall > 0
            else 0.0
        )
        out.append(
            {
                "class": c,
                "support": int(tp[c] + fn[c]),
                "precision": float(precision),
                "recall": float(recall),
                "f1": float(f1),
            }
        )
    return out


def macro_f1(preds: Sequence[int], labels: Sequence[int], n_classes: int) -> float:
    """Mean per-class F1 over classes present in predictions or labels."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.size == 0:
        raise ValueError("cannot score an empty prediction set")
    rows = precision_recall_f1(preds, labels, n_classes)
    present = [
        r["f1"]
        for c, r in enumerate(rows)
        if np.any(preds == c) or np.any(labels == c)
    ]
    if not present:
        raise ValueError("no classes present")
    return float(np.mean(present))


def micro_f1(preds: Sequence[int], labels: Sequence[int], n_classes: int) -> float:
    """Globally pooled F1; for single-label classification this equals accuracy."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    tp, fp, fn = _class_counts(preds, labels, n_classes)
    denom = 2 * tp.sum() + fp.sum() + fn.sum()
    return float(2 * tp.sum() / denom) if denom > 0 else 0.0


def binary_auc_rank(scores: Sequence[float], positive: Sequence[bool]) -> float:
    """ROC AUC of a score column via the rank-sum statistic.

    Tied scores receive their average rank, which credits ties as half
    concordant.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = int(positive.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative samples")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # average rank for the tie group, 1-based
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = ranks[positive].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_auc_ovr(probs: np.ndarray, labels: Sequence[int]) -> float:
    """One-vs-rest ROC AUC, macro-averaged over classes present in labels."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise ValueError("probs must be (n, classes) aligned with labels")
    present = sorted(set(int(c) for c in labels))
    if len(present) < 2:
        raise UndefinedMetricError("AUC is undefined with a single class present")
    per_class = [binary_auc_rank(probs[:, c], labels == c) for c in present]
    return float(np.mean(per_class))


def confusion_matrix(
    preds: Sequence[int],
    labels: Sequence[int],
    n_classes: int,
    row_normalize: bool = False,
) -> np.ndarray:
    """Counts (or row-normalized rates) of label -> prediction pairs."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    matrix = np.zeros((n_classes, n_classes))
    for t, p in zip(labels, preds):
        matrix[int(t), int(p)] += 1
    if row_normalize:
        sums = matrix.sum(axis=1, keepdims=True)
        matrix = np.divide(matrix, sums, out=np.zeros_like(matrix), where=sums > 0)
    return matrix


def hierarchy_consistency(
    preds_l1: Sequence[int],
    preds_l2: Sequence[int],
    taxonomy: ActivityTaxonomy,
) -> float:
    """Fraction of windows whose level-2 prediction rolls up to the
    predicted level-1 class."""
    preds_l1 = np.asarray(preds_l1)
    preds_l2 = np.asarray(preds_l2)
    if preds_l1.shape != preds_l2.shape or preds_l1.size == 0:
        raise ValueError("prediction arrays must be equal-length and non-empty")
    l1_names = taxonomy.level1_classes
    l2_names = taxonomy.level2_classes
    l1_index = {name: i for i, name in enumerate(l1_names)}
    rollup = np.array(
        [l1_index[taxonomy.level1_of(name)] for name in l2_names], dtype=np.int64
    )
    return float((rollup[preds_l2] == preds_l1).mean())


@dataclass
class EvalReport:
    """All headline numbers for one (width, split) evaluation."""

    width: int
    split: str
    n_windows: int
    accuracy_l1: float
    macro_f1_l1: float
    micro_f1_l1: float
    auc_l1: float | None
    accuracy_l2: float
    macro_f1_l2: float
    micro_f1_l2: float
    auc_l2: float | None
    hierarchy_consistency: float
    confusion_l1: list[list[float]] = field(default_factory=list)
    confusion_l2: list[list[float]] = field(default_factory=list)
    per_class_l1: list[dict] = field(default_factory=list)
    per_class_l2: list[dict] = field(default_factory=list)


def evaluate_run(
    params: ModelParams,
    windows: Sequence[FeatureWindow],
    taxonomy: ActivityTaxonomy,
    *,
    width: int = 0,
    split: str = "",
) -> EvalReport:
    """Score a trained model on already-normalized windows.

    Synthetic windows are dropped first. AUC entries are None when fewer
    than two classes are present at that level.
    """
    real = [w for w in windows if not w.synthetic]
    if not real:
        raise ValueError("no real windows to evaluate")
    x, y1, y2 = windows_to_arrays(real, taxonomy)
    preds = predict(params, x)
    n1 = len(taxonomy.level1_classes)
    n2 = len(taxonomy.level2_classes)

    def safe_auc(probs, labels):
        try:
            return roc_auc_ovr(probs, labels)
        except UndefinedMetricError:
            return None

    return EvalReport(
        width=width,
        split=split,
        n_windows=len(real),
        accuracy_l1=accuracy(preds.pred1, y1),
        macro_f1_l1=macro_f1(preds.pred1, y1, n1),
        micro_f1_l1=micro_f1(preds.pred1, y1, n1),
        auc_l1=safe_auc(preds.probs1, y1),
        accuracy_l2=accuracy(preds.pred2, y2),
        macro_f1_l2=macro_f1(preds.pred2, y2, n2),
        micro_f1_l2=micro_f1(preds.pred2, y2, n2),
        auc_l2=safe_auc(preds.probs2, y2),
        hierarchy_consistency=hierarchy_consistency(preds.pred1, preds.pred2, taxonomy),
        confusion_l1=confusion_matrix(preds.pred1, y1, n1, row_normalize=True).tolist(),
        confusion_l2=confusion_matrix(preds.pred2, y2, n2, row_normalize=True).tolist(),
        per_class_l1=precision_recall_f1(preds.pred1, y1, n1),
        per_class_l2=precision_recall_f1(preds.pred2, y2, n2),
    )


def report_to_json(report: EvalReport) -> str:
    payload = {
        "width": report.width,
        "split": report.split,
        "n_windows": report.n_windows,
        "accuracy_l1": report.accuracy_l1,
        "macro_f1_l1": report.macro_f1_l1,
        "micro_f1_l1": report.micro_f1_l1,
        "auc_l1": report.auc_l1,
        "accuracy_l2": report.accuracy_l2,
        "macro_f1_l2": report.macro_f1_l2,
        "micro_f1_l2": report.micro_f1_l2,
        "auc_l2": report.auc_l2,
        "hierarchy_consistency": report.hierarchy_consistency,
        "confusion_l1": report.confusion_l1,
        "confusion_l2": report.confusion_l2,
        "per_class_l1": report.per_class_l1,
        "per_class_l2": report.per_class_l2,
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def confusion_to_csv(matrix: Sequence[Sequence[float]], class_names: Sequence[str]) -> str:
    """Rows are true classes, columns predicted classes."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["true\\pred", *class_names])
    for name, row in zip(class_names, matrix):
        writer.writerow([name, *(repr(float(v)) for v in row)])
    return buf.getvalue()


def trend_csv(rows: Sequence[tuple[int, str, str, float]]) -> str:
    """width,split,metric,value rows for cross-width comparisons."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TREND_HEADER)
    for width, split, metric, value in rows:
        writer.writerow([str(width), split, metric, repr(float(value))])
    return buf.getvalue()
