"""Threshold-free detection metrics.  Label 1 marks an anomaly; higher scores mean more anomalous."""

from __future__ import annotations

import numpy as np

from alps.errors import UndefinedMetricError


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 (normal) or 1 (anomaly)")
    y = y.astype(bool)
    if y.all() or not y.any():
        raise UndefinedMetricError("AUROC/EER undefined: labels contain a single class")
    return s, y


def auroc(scores, labels) -> float:
    """Probability that a random anomaly outscores a random normal sample, ties counting one half.

    Pair counts are accumulated as exact integers, so the result is the
    correctly rounded value of the underlying rational.
    """
    s, y = _validate(scores, labels)
    pos, neg = s[y], np.sort(s[~y])
    below = np.searchsorted(neg, pos, side="left")
    at_or_below = np.searchsorted(neg, pos, side="right")
    twice_wins = 2 * int(below.sum()) + int((at_or_below - below).sum())
    return twice_wins / (2 * pos.size * neg.size)


def error_rates(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """FPR and FNR when flagging ``score >= t`` for every distinct score ``t``, plus ``t = +inf``."""
    s, y = _validate(scores, labels)
    thresholds = np.unique(s)
    pos, neg = np.sort(s[y]), np.sort(s[~y])
    fpr = (neg.size - np.searchsorted(neg, thresholds, side="left")) / neg.size
    fnr = np.searchsorted(pos, thresholds, side="left") / pos.size
    return (np.append(thresholds, np.inf), np.append(fpr, 0.0), np.append(fnr, 1.0))


def eer(scores, labels) -> float:
    """Equal error rate, interpolating linearly between the two operating points bracketing FPR == FNR."""
    _, fpr, fnr = error_rates(scores, labels)
    diff = fpr - fnr  # non-increasing from +1 to -1
    k = int(np.argmax(diff <= 0))
    if diff[k] == 0:
        return float(fpr[k])
    a, b = diff[k - 1], diff[k]
    t = a / (a - b)
    return float(fpr[k - 1] + t * (fpr[k] - fpr[k - 1]))
