"""Clustering and classification metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.int64).ravel()
    truth = np.asarray(truth, dtype=np.int64).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"label arrays differ in length: {pred.size} vs {truth.size}")
    return pred, truth


def contingency(pred, truth) -> np.ndarray:
    pred, truth = _pair(pred, truth)
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    table = np.zeros((p.max(initial=-1) + 1, t.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


def clustering_acc(pred, truth) -> float:
    """Accuracy under the best one-to-one matching of clusters to classes."""
    pred, truth = _pair(pred, truth)
    if pred.size == 0:
        return 1.0
    table = contingency(pred, truth)
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum() / pred.size)


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth) -> float:
    """Mutual information over the geometric mean of the two entropies (natural log)."""
    pred, truth = _pair(pred, truth)
    if pred.size == 0:
        return 1.0
    table = contingency(pred, truth).astype(np.float64)
    h_pred = _entropy(table.sum(axis=1))
    h_true = _entropy(table.sum(axis=0))
    if h_pred == 0.0 or h_true == 0.0:
        # a degenerate labeling: identical partitions score 1, anything else 0
        same = table.shape[0] == table.shape[1] and np.count_nonzero(table) == table.shape[0]
        return 1.0 if same else 0.0
    n = table.sum()
    joint = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / (n * n)
    nz = joint > 0
    mi = float((joint[nz] * np.log(joint[nz] / outer[nz])).sum())
    return float(np.clip(mi / np.sqrt(h_pred * h_true), 0.0, 1.0))


@dataclass
class ClassificationReport:
    acc: float
    precision: float
    f1: float

    def as_dict(self) -> dict:
        return {"acc": self.acc, "precision": self.precision, "f1": self.f1}


def classification_metrics(pred, truth, n_classes: int | None = None) -> ClassificationReport:
    """Accuracy plus macro-averaged precision and F1; 0/0 terms count as 0.

    Classes absent from both ``pred`` and ``truth`` are left out of the macro
    average.
    """
    pred, truth = _pair(pred, truth)
    if pred.size == 0:
        raise ValueError("no predictions to score")
    c = n_classes or int(max(pred.max(), truth.max())) + 1
    acc = float(np.mean(pred == truth))
    precisions, f1s = [], []
    for k in range(c):
        tp = np.sum((pred == k) & (truth == k))
        n_pred = np.sum(pred == k)
        n_true = np.sum(truth == k)
        if n_pred == 0 and n_true == 0:
            continue
        prec = tp / n_pred if n_pred else 0.0
        rec = tp / n_true if n_true else 0.0
        precisions.append(prec)
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return ClassificationReport(acc, float(np.mean(precisions)), float(np.mean(f1s)))
