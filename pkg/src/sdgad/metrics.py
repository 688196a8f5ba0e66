"""Ranking and threshold metrics for heavily imbalanced anomaly scores.

Higher score = more anomalous; label 1 = anomaly.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(np.int64)
    if scores.shape != labels.shape:
        raise MetricError(f"{scores.size} scores but {labels.size} labels")
    if not np.isin(labels, (0, 1)).all():
        raise MetricError("labels must be 0 or 1")
    return scores, labels


def auroc(scores, labels) -> float:
    """P(score of random positive > score of random negative), ties count 1/2."""
    scores, labels = _check(scores, labels)
    pos = int(labels.sum())
    neg = labels.size - pos
    if pos == 0 or neg == 0:
        raise MetricError("AUROC needs both classes")
    ranks = rankdata(scores)  # average ranks give the 1/2 tie credit
    return float((ranks[labels == 1].sum() - pos * (pos + 1) / 2.0) / (pos * neg))


def average_precision(scores, labels) -> float:
    """Step-interpolated area under the precision-recall curve.

    Thresholds sweep the distinct scores from high to low; all samples sharing a
    score enter together, and each threshold contributes (recall gain) x precision.
    """
    scores, labels = _check(scores, labels)
    pos = int(labels.sum())
    if pos == 0:
        raise MetricError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # last index of every group of equal scores
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp, fp = tp[last], fp[last]
    recall = tp / pos
    precision = tp / (tp + fp)
    gains = np.diff(np.r_[0.0, recall])
    return float(np.sum(gains * precision))


def confusion(scores, labels, threshold: float) -> tuple[int, int, int, int]:
    scores, labels = _check(scores, labels)
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    tn = int(np.sum(~pred & (labels == 0)))
    return tp, fp, fn, tn


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def f1_at_threshold(scores, labels, threshold: float = 0.5) -> float:
    """F1 with "anomalous" predicted iff score >= threshold; 0 when TP = 0."""
    tp, fp, fn, _ = confusion(scores, labels, threshold)
    return f1_from_counts(tp, fp, fn)


def score_from_likelihood(rescaled):
    """1 - exp(l) for rescaled log-likelihoods l in [-1, 0]."""
    return 1.0 - np.exp(np.asarray(rescaled, dtype=np.float64))


def boundary_threshold(b_a: float | None) -> float:
    """Score threshold equivalent to classifying l <= B_a as anomalous."""
    if b_a is None or not math.isfinite(b_a):
        raise MetricError("checkpoint carries no anomaly boundary")
    # same exp as score_from_likelihood so both classification paths agree exactly
    return float(1.0 - np.exp(np.float64(b_a)))


def overlap_coefficient(a, b, bins: int = 50) -> float:
    """Histogram intersection of two samples over their common range."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi <= lo:
        return 1.0
    edges = np.linspace(lo, hi, bins + 1)
    ha, _ = np.histogram(a, edges)
    hb, _ = np.histogram(b, edges)
    return float(np.minimum(ha / ha.sum(), hb / hb.sum()).sum())


def summarize(values) -> tuple[float, float]:
    """Mean and population std across runs."""
    values = np.asarray(values, dtype=np.float64)
    return float(values.mean()), float(values.std())
