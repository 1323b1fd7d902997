"""Reconstruction error -> normalised risk maps and the low/high threshold."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateLabels, DimensionMismatch


@dataclass(frozen=True)
class NormalizationConstants:
    low: float
    high: float
    percentile: float = 99.0

    def apply(self, errors) -> np.ndarray:
        e = np.asarray(errors, dtype=float)
        span = self.high - self.low
        if not span > 0:
            # degenerate range: nothing above the reference level carries risk
            return (e > self.high).astype(float)
        return np.clip((e - self.low) / span, 0.0, 1.0)


@dataclass(frozen=True)
class RiskThreshold:
    theta: float
    tpr: float
    fpr: float

    @property
    def distance(self) -> float:
        return math.sqrt((1.0 - self.tpr) ** 2 + self.fpr ** 2)


def error_map(x, x_hat) -> np.ndarray:
    """Per-pixel channel-mean squared error."""
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x.shape != x_hat.shape:
        raise DimensionMismatch(f"{x.shape} vs {x_hat.shape}")
    sq = (x_hat - x) ** 2
    return sq if sq.ndim == 2 else sq.mean(axis=-1)


def fit_normalization(errors: Sequence, percentile: float = 99.0) -> NormalizationConstants:
    flat = np.concatenate([np.asarray(e, dtype=float).ravel() for e in errors])
    if flat.size == 0:
        raise ValueError("normalisation needs at least one pixel")
    return NormalizationConstants(float(flat.min()), float(np.percentile(flat, percentile)), percentile)


def normalize(errors: Sequence, percentile: float = 99.0):
    """Scale a whole evaluation set with one (min, p99) affine map.

    Returns ``(risk_maps, constants)``.
    """
    consts = fit_normalization(errors, percentile)
    return [consts.apply(e) for e in errors], consts


def _rates(scores, labels):
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels, dtype=bool).ravel()
    if s.shape != y.shape:
        raise DimensionMismatch("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("need at least one positive and one negative label")
    return s, y, n_pos, n_neg


def candidate_thresholds(scores) -> np.ndarray:
    u = np.unique(np.asarray(scores, dtype=float))
    mids = u[:-1] + 0.5 * (u[1:] - u[:-1])
    return np.concatenate([[u[0] - 1.0], mids, [u[-1] + 1.0]])


def select_threshold(scores, labels) -> RiskThreshold:
    """Threshold minimising the distance of (FPR, TPR) to the (0, 1) corner.

    Positives are predicted where ``score > theta``.  Candidates are the
    midpoints between consecutive distinct scores plus one sentinel below
    the minimum and one above the maximum; ties go to the smaller theta.
    """
    s, y, n_pos, n_neg = _rates(scores, labels)
    cand = candidate_thresholds(s)
    order = np.argsort(s, kind="stable")
    s_sorted = s[order]
    pos_sorted = y[order]
    # number of samples with score <= theta, for each candidate
    n_le = np.searchsorted(s_sorted, cand, side="right")
    pos_le = np.concatenate([[0], np.cumsum(pos_sorted)])[n_le]
    neg_le = n_le - pos_le
    tpr = (n_pos - pos_le) / n_pos
    fpr = (n_neg - neg_le) / n_neg
    dist = np.sqrt((1.0 - tpr) ** 2 + fpr ** 2)
    best = int(np.argmin(dist))  # candidates ascend, so first minimum = smallest theta
    return RiskThreshold(float(cand[best]), float(tpr[best]), float(fpr[best]))


def classify(risk, threshold) -> np.ndarray:
    """True (high risk) where ``risk > theta``."""
    theta = threshold.theta if isinstance(threshold, RiskThreshold) else float(threshold)
    return np.asarray(risk, dtype=float) > theta


def risk_to_u8(risk) -> np.ndarray:
    return np.rint(np.clip(np.asarray(risk, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)
