"""Clustering quality against ground-truth labels.

All scores are invariant to renaming cluster ids. Each cluster is assigned
its most common ground-truth label (smallest label on ties).
"""

import numpy as np
from sklearn.metrics import f1_score, normalized_mutual_info_score
from sklearn.metrics.cluster import contingency_matrix

from ..reports import ClassBreakdown, ClusterBreakdown


def _check(assignments, labels) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(assignments).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if len(a) != len(y):
        raise ValueError(f"assignments and labels differ in length ({len(a)} vs {len(y)})")
    if len(a) == 0:
        raise ValueError("cannot score an empty clustering")
    return a, y


def majority_predictions(assignments, labels) -> np.ndarray:
    """Each sample's prediction is the majority label of its cluster."""
    a, y = _check(assignments, labels)
    clusters, a_idx = np.unique(a, return_inverse=True)
    classes, y_idx = np.unique(y, return_inverse=True)
    table = contingency_matrix(a_idx, y_idx)  # (clusters, classes)
    return classes[np.argmax(table, axis=1)][a_idx]


def cluster_accuracy(assignments, labels) -> float:
    """Sum over clusters of the majority-label count, divided by N."""
    a, y = _check(assignments, labels)
    table = contingency_matrix(a, y)
    return float(table.max(axis=1).sum() / len(a))


def weighted_f1(assignments, labels) -> float:
    """Support-weighted F1 of the majority-label predictions."""
    a, y = _check(assignments, labels)
    return float(f1_score(y, majority_predictions(a, y), average="weighted", zero_division=0))


def nmi(assignments, labels) -> float:
    """I(A; L) / sqrt(H(A) H(L)) in nats; 1 when both entropies vanish, 0 when only one does."""
    a, y = _check(assignments, labels)
    return float(normalized_mutual_info_score(y, a, average_method="geometric"))


def class_breakdown(assignments, labels) -> list[ClassBreakdown]:
    a, y = _check(assignments, labels)
    pred = majority_predictions(a, y)
    rows = []
    for c in np.unique(y):
        tp = int(np.sum((pred == c) & (y == c)))
        fp = int(np.sum((pred == c) & (y != c)))
        fn = int(np.sum((pred != c) & (y == c)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        rows.append(ClassBreakdown(label=int(c), support=tp + fn, precision=precision, recall=recall, f1=f1))
    return rows


def cluster_breakdown(assignments, labels) -> list[ClusterBreakdown]:
    a, y = _check(assignments, labels)
    clusters, a_idx = np.unique(a, return_inverse=True)
    classes, y_idx = np.unique(y, return_inverse=True)
    table = contingency_matrix(a_idx, y_idx)
    return [
        ClusterBreakdown(
            cluster=int(c),
            size=int(table[n].sum()),
            majority_label=int(classes[np.argmax(table[n])]),
            purity=float(table[n].max() / table[n].sum()),
        )
        for n, c in enumerate(clusters)
    ]
