"""Classification metrics: confusion matrix, Cohen's kappa, balanced
accuracy, weighted F1, AUROC, and AUPRC."""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np


def confusion_matrix(labels: np.ndarray, predictions: np.ndarray, num_classes: int) -> np.ndarray:
    """Counts (K, K): rows are true classes, columns predicted."""
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape:
        raise ValueError("labels/predictions shape mismatch")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, predictions), 1)
    return cm


def predict_labels(probabilities: np.ndarray) -> np.ndarray:
    """Argmax with lowest-index tie-break."""
    return np.argmax(probabilities, axis=-1)


def cohen_kappa(cm: np.ndarray) -> float:
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total <= 0:
        raise ValueError("empty confusion matrix")
    p_o = np.trace(cm) / total
    p_e = float((cm.sum(axis=1) * cm.sum(axis=0)).sum()) / total**2
    if p_e >= 1.0:
        return 0.0
    return (p_o - p_e) / (1.0 - p_e)


def balanced_accuracy(cm: np.ndarray) -> float:
    cm = np.asarray(cm, dtype=np.float64)
    support = cm.sum(axis=1)
    present = support > 0
    if not np.all(present):
        warnings.warn("classes without samples excluded from balanced accuracy")
    if not np.any(present):
        raise ValueError("no samples")
    recall = np.diag(cm)[present] / support[present]
    return float(recall.mean())


def weighted_f1(cm: np.ndarray) -> float:
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total <= 0:
        raise ValueError("empty confusion matrix")
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    tp = np.diag(cm)
    f1 = np.zeros(cm.shape[0])
    for k in range(cm.shape[0]):
        denom = support[k] + predicted[k]
        f1[k] = 2.0 * tp[k] / denom if denom > 0 else 0.0
    return float((f1 * support).sum() / total)


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-statistic AUROC with ties averaged (Mann-Whitney)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = labels.sum()
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auprc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Step-function (non-interpolated) precision-recall area."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = labels.sum()
    if n_pos == 0 or n_pos == labels.size:
        raise ValueError("both classes must be present")
    order = np.argsort(-scores, kind="mergesort")
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(~sorted_labels)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    # evaluate only at the last index of each distinct threshold
    distinct = np.append(np.diff(scores[order]) != 0, True)
    precision = precision[distinct]
    recall = recall[distinct]
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_recall) * precision).sum())


def auroc_auprc(scores: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    return auroc(scores, labels), auprc(scores, labels)


def metric_report(
    labels: np.ndarray, probabilities: np.ndarray, num_classes: int
) -> dict:
    """Full JSON-ready report {kappa, bacc, wf1, auroc, auprc, confusion}."""
    predictions = predict_labels(probabilities)
    cm = confusion_matrix(labels, predictions, num_classes)
    report = {
        "kappa": cohen_kappa(cm),
        "bacc": balanced_accuracy(cm),
        "wf1": weighted_f1(cm),
        "auroc": None,
        "auprc": None,
        "confusion": cm.tolist(),
    }
    if num_classes == 2 and len(set(np.asarray(labels).tolist())) == 2:
        a, p = auroc_auprc(probabilities[:, 1], labels)
        report["auroc"] = a
        report["auprc"] = p
    return report


def save_report(report: dict, path: Path | str) -> None:
    Path(path).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
