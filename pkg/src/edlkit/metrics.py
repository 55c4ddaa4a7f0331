"""Ranking, calibration and uncertainty-score metrics.

Convention: a *confidence* is higher for samples that are more likely
positive (in-distribution, or correctly classified).  Positives are
labelled 1 and negatives 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import dirichlet as dr

__all__ = [
    "MEASURES",
    "UndefinedMetricError",
    "ScoredSample",
    "auroc",
    "aupr",
    "roc_points",
    "pr_points",
    "ece",
    "brier",
    "uncertainty_scores",
    "minmax_normalize",
    "write_roc_csv",
    "write_pr_csv",
]

MEASURES = ("mp", "um", "de", "mi")


class UndefinedMetricError(ValueError):
    """The metric is undefined for this label composition."""


@dataclass(frozen=True)
class ScoredSample:
    confidence: float
    is_positive: bool


def _unpack(scores, labels):
    if labels is None:
        samples = list(scores)
        scores = [s.confidence for s in samples]
        labels = [s.is_positive for s in samples]
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isfinite(s)):
        raise ValueError("confidences must be finite")
    return s, y


def _tie_blocks(s, y):
    """Cumulative (tp, fp) at the end of each block of equal scores, descending."""
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last].astype(np.float64)
    fp = (last + 1) - tp
    return s[last], tp, fp


def roc_points(scores, labels=None):
    """(fpr, tpr, thresholds) from the strictest threshold down; starts at (0, 0)."""
    s, y = _unpack(scores, labels)
    npos, nneg = y.sum(), (~y).sum()
    if npos == 0 or nneg == 0:
        raise UndefinedMetricError("ROC needs at least one positive and one negative")
    thr, tp, fp = _tie_blocks(s, y)
    return np.r_[0.0, fp / nneg], np.r_[0.0, tp / npos], np.r_[np.inf, thr]


def auroc(scores, labels=None) -> float:
    """Area under the ROC curve; tied positive/negative pairs count one half."""
    fpr, tpr, _ = roc_points(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def pr_points(scores, labels=None):
    """(precision, recall, thresholds), one point per distinct score."""
    s, y = _unpack(scores, labels)
    npos = y.sum()
    if npos == 0:
        raise UndefinedMetricError("precision-recall needs at least one positive")
    thr, tp, fp = _tie_blocks(s, y)
    return tp / (tp + fp), tp / npos, thr


def aupr(scores, labels=None) -> float:
    """Average precision: sum of precision * recall increment over tie blocks."""
    precision, recall, _ = pr_points(scores, labels)
    return float(np.sum(precision * np.diff(np.r_[0.0, recall])))


def ece(confidences, correctness, bins: int = 15) -> float:
    """Expected calibration error over equal-width bins (lo, hi] on [0, 1].

    A confidence of exactly 0 falls in the first bin.
    """
    c = np.asarray(confidences, dtype=np.float64).ravel()
    ok = np.asarray(correctness, dtype=np.float64).ravel()
    if c.shape != ok.shape:
        raise ValueError("confidences and correctness differ in length")
    if c.size == 0:
        return 0.0
    if np.any((c < 0) | (c > 1)):
        raise ValueError("confidences must lie in [0, 1]")
    idx = np.clip(np.ceil(c * bins).astype(int) - 1, 0, bins - 1)
    total = 0.0
    for b in range(bins):
        m = idx == b
        if m.any():
            total += m.sum() / c.size * abs(ok[m].mean() - c[m].mean())
    return float(total)


def brier(probs, onehot) -> float:
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(onehot, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError("probabilities and labels differ in shape")
    return float(np.mean(((y - p) ** 2).sum(axis=-1)))


def uncertainty_scores(alphas, measure: str, lam: float = 1.0) -> np.ndarray:
    """Per-sample confidence from Dirichlet parameters (rows of ``alphas``).

    ``mp`` is the max projected probability itself; ``um``, ``de`` and ``mi``
    are uncertainties and are negated so that higher still means more
    in-distribution.
    """
    if measure not in MEASURES:
        raise ValueError(f"unknown measure {measure!r}; expected one of {MEASURES}")
    if not isinstance(alphas, np.ndarray):
        alphas = np.array([getattr(a, "alpha", a) for a in alphas], dtype=np.float64)
    a = np.atleast_2d(alphas)
    if measure == "mp":
        return np.asarray(dr.max_probability(a))
    if measure == "um":
        return -np.asarray(dr.uncertainty_mass(a, lam))
    if measure == "de":
        return -np.asarray(dr.differential_entropy(a))
    return -np.asarray(dr.mutual_information(a))


def minmax_normalize(u) -> np.ndarray:
    """(u - min) / (max - min); a constant input maps to zeros."""
    u = np.asarray(u, dtype=np.float64)
    span = u.max() - u.min()
    if span == 0:
        return np.zeros_like(u)
    return (u - u.min()) / span


def _fmt(v: float) -> str:
    return "inf" if np.isinf(v) else f"{v:.12g}"


def write_roc_csv(path, scores, labels=None) -> None:
    fpr, tpr, thr = roc_points(scores, labels)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, r in zip(thr, fpr, tpr):
            w.writerow([_fmt(t), _fmt(f), _fmt(r)])


def write_pr_csv(path, scores, labels=None) -> None:
    precision, recall, thr = pr_points(scores, labels)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall"])
        for t, p, r in zip(thr, precision, recall):
            w.writerow([_fmt(t), _fmt(p), _fmt(r)])
