"""Detection metrics: ROC curves, AUC, TPR at a false-positive budget.

Computed by explicit threshold sweep over the unique scores so tied
scores flip together. The TPR@FPR convention is conservative: the best
TPR among operating points whose FPR stays within the limit, with no
interpolation credit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLabels


@dataclass(frozen=True)
class RocPoint:
    fpr: float
    tpr: float
    threshold: float


@dataclass(frozen=True)
class RocCurve:
    points: tuple[RocPoint, ...]  # fpr/tpr non-decreasing, endpoints included


@dataclass(frozen=True)
class MetricsReport:
    auc: float
    tpr_at_fpr: dict[float, float]
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int
    n: int


def roc(scores, labels) -> RocCurve:
    """Threshold sweep over descending unique scores; ties grouped."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape or scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores and labels must be equal-length non-empty vectors")
    pos = int(labels.sum())
    neg = labels.size - pos
    if pos == 0 or neg == 0:
        raise DegenerateLabels("ROC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    points = [RocPoint(0.0, 0.0, float("inf"))]
    tp = fp = 0
    i = 0
    n = scores.size
    while i < n:
        j = i
        while j < n and sorted_scores[j] == sorted_scores[i]:
            j += 1
        block = sorted_labels[i:j]
        tp += int(block.sum())
        fp += int(j - i - block.sum())
        points.append(RocPoint(fp / neg, tp / pos, float(sorted_scores[i])))
        i = j
    return RocCurve(points=tuple(points))


def auc(curve: RocCurve) -> float:
    """Trapezoidal integral of the curve over FPR."""
    total = 0.0
    for a, b in zip(curve.points, curve.points[1:]):
        total += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0
    return total


def tpr_at_fpr(curve: RocCurve, fpr_limit: float) -> float:
    """Best TPR with FPR within the limit (step convention, no interpolation)."""
    if not 0.0 <= fpr_limit <= 1.0:
        raise ValueError("fpr_limit must be in [0, 1]")
    best = 0.0
    for point in curve.points:
        if point.fpr <= fpr_limit:
            best = max(best, point.tpr)
    return best


def evaluate(scores, labels, fpr_limits=(1e-1, 1e-2, 1e-3),
             threshold: float = 0.5) -> MetricsReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    curve = roc(scores, labels)
    predicted = scores >= threshold
    tp = int((predicted & (labels == 1)).sum())
    fp = int((predicted & (labels == 0)).sum())
    tn = int((~predicted & (labels == 0)).sum())
    fn = int((~predicted & (labels == 1)).sum())
    return MetricsReport(
        auc=auc(curve),
        tpr_at_fpr={limit: tpr_at_fpr(curve, limit) for limit in fpr_limits},
        accuracy=(tp + tn) / labels.size,
        tp=tp, fp=fp, tn=tn, fn=fn, n=int(labels.size),
    )


def roc_to_tsv(curve: RocCurve) -> str:
    lines = ["fpr\ttpr\tthreshold"]
    for p in curve.points:
        lines.append(f"{p.fpr!r}\t{p.tpr!r}\t{p.threshold!r}")
    return "\n".join(lines) + "\n"
