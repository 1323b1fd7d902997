"""ROC/AUROC, semantic intersection metrics and per-region histograms.

Vegetation is the positive (high-risk) class throughout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, NoLabeledPixels
from .risk import _rates


class SemanticClass(enum.IntEnum):
    UNLABELED = 0
    GROUND = 1
    VEGETATION = 2


DEFAULT_LABEL_VALUES = {"unlabeled": 0, "ground": 1, "vegetation": 2}


def decode_labels(raw, label_values: Mapping[str, int] = DEFAULT_LABEL_VALUES) -> np.ndarray:
    """Map raw label-image values to :class:`SemanticClass`; unknown values -> unlabeled."""
    raw = np.asarray(raw)
    out = np.full(raw.shape, SemanticClass.UNLABELED, dtype=np.uint8)
    out[raw == label_values["ground"]] = SemanticClass.GROUND
    out[raw == label_values["vegetation"]] = SemanticClass.VEGETATION
    return out


@dataclass(frozen=True, eq=False)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # score at which each point is reached; +inf for (0, 0)

    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def area(self) -> float:
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))


@dataclass(frozen=True)
class IntersectionReport:
    ground_low_risk_percent: Optional[float]
    vegetation_high_risk_percent: Optional[float]
    auroc: Optional[float] = None


def roc_curve(scores, labels) -> RocCurve:
    """One operating point per distinct score, sweeping thresholds downwards."""
    s, y, n_pos, n_neg = _rates(scores, labels)
    order = np.argsort(-s, kind="stable")
    s_desc = s[order]
    y_desc = y[order]
    tp = np.cumsum(y_desc)
    fp = np.cumsum(~y_desc)
    # last index of every run of equal scores
    last = np.flatnonzero(np.r_[s_desc[1:] != s_desc[:-1], True])
    tpr = np.r_[0.0, tp[last] / n_pos]
    fpr = np.r_[0.0, fp[last] / n_neg]
    thr = np.r_[np.inf, s_desc[last]]
    return RocCurve(fpr, tpr, thr)


def auroc(scores, labels) -> float:
    return roc_curve(scores, labels).area()


def pairwise_auroc(scores, labels) -> float:
    """O(n^2) reference: P(score_pos > score_neg) + 0.5 P(tie)."""
    s, y, _, _ = _rates(scores, labels)
    pos = s[y][:, None]
    neg = s[~y][None, :]
    wins = np.sum(pos > neg) + 0.5 * np.sum(pos == neg)
    return float(wins / (pos.size * neg.size))


def intersection_metrics(high_risk, labels) -> IntersectionReport:
    """Percent of ground predicted low risk and of vegetation predicted high risk.

    *labels* holds :class:`SemanticClass` values.  A class with no pixels is
    reported as ``None``.
    """
    high = np.asarray(high_risk, dtype=bool)
    lab = np.asarray(labels)
    if high.shape != lab.shape:
        raise DimensionMismatch(f"{high.shape} vs {lab.shape}")
    ground = lab == SemanticClass.GROUND
    veg = lab == SemanticClass.VEGETATION
    n_g = int(ground.sum())
    n_v = int(veg.sum())
    g_pct = 100.0 * int((ground & ~high).sum()) / n_g if n_g else None
    v_pct = 100.0 * int((veg & high).sum()) / n_v if n_v else None
    return IntersectionReport(g_pct, v_pct)


def require_class(report: IntersectionReport, name: str) -> float:
    value = getattr(report, name)
    if value is None:
        raise NoLabeledPixels(f"no pixels of the class behind {name}")
    return value


def region_scores(risk_maps: Sequence, label_maps: Sequence, per_image: bool = False):
    """Collect (scores, is_vegetation) over ground and vegetation pixels.

    With ``per_image`` each image contributes one mean score per class present.
    """
    scores, positives = [], []
    for risk, lab in zip(risk_maps, label_maps):
        risk = np.asarray(risk, dtype=float)
        lab = np.asarray(lab)
        if risk.shape != lab.shape:
            raise DimensionMismatch(f"risk {risk.shape} vs labels {lab.shape}")
        for cls, is_pos in ((SemanticClass.GROUND, False), (SemanticClass.VEGETATION, True)):
            sel = lab == cls
            if not sel.any():
                continue
            vals = risk[sel]
            if per_image:
                vals = np.array([vals.mean()])
            scores.append(vals)
            positives.append(np.full(vals.size, is_pos))
    if not scores:
        raise NoLabeledPixels("no ground or vegetation pixels in the evaluation set")
    return np.concatenate(scores), np.concatenate(positives)


@dataclass(frozen=True, eq=False)
class RegionHistograms:
    edges: np.ndarray
    counts: dict  # class name -> counts array


def region_histograms(error_maps: Sequence, label_maps: Sequence, bins: int = 32) -> RegionHistograms:
    """Per-class histograms over shared, uniform bin edges."""
    if bins < 1:
        raise ValueError("bins must be positive")
    per_class = {SemanticClass.GROUND: [], SemanticClass.VEGETATION: []}
    for err, lab in zip(error_maps, label_maps):
        err = np.asarray(err, dtype=float)
        lab = np.asarray(lab)
        if err.shape != lab.shape:
            raise DimensionMismatch(f"errors {err.shape} vs labels {lab.shape}")
        for cls in per_class:
            per_class[cls].append(err[lab == cls])
    values = {c: np.concatenate(v) if v else np.empty(0) for c, v in per_class.items()}
    everything = np.concatenate(list(values.values()))
    if everything.size == 0:
        raise NoLabeledPixels("no labelled pixels to histogram")
    edges = np.histogram_bin_edges(everything, bins=bins)
    counts = {c.name.lower(): np.histogram(v, bins=edges)[0] for c, v in values.items()}
    return RegionHistograms(edges, counts)
