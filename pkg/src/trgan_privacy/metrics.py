"""ROC/AUC, Welch's t-test, privacy protection and segmentation utility."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import betainc

from .volume import Mask, Sample


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


@dataclass(frozen=True)
class FidelityScore:
    correlation_accuracy: float
    correlation_mse: float


@dataclass(frozen=True)
class PrivacyUtilityPoint:
    step: int
    utility: float
    privacy: float
    fidelity: Optional[FidelityScore]
    auc: float


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and of equal length")
    if labels.all() or not labels.any():
        raise ValueError("both classes must be present")
    return scores, labels


def roc_curve(scores, labels) -> RocCurve:
    """Threshold sweep over distinct scores, descending; ties move as one group."""
    scores, labels = _check_binary(scores, labels)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    # last index of every tie group
    ends = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[ends]
    fp = np.cumsum(~y)[ends]
    tpr = np.r_[0.0, tp / labels.sum()]
    fpr = np.r_[0.0, fp / (~labels).sum()]
    return RocCurve(fpr=fpr, tpr=tpr)


def auc(scores, labels) -> float:
    curve = roc_curve(scores, labels)
    return float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1]) / 2.0))


def welch_t_test(a, b) -> tuple[float, float]:
    """Welch's unequal-variance t statistic and two-sided p-value."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each group needs at least 2 values")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0 or vb == 0:
        raise ValueError("zero-variance group")
    sa, sb = va / a.size, vb / b.size
    t = (a.mean() - b.mean()) / np.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa ** 2 / (a.size - 1) + sb ** 2 / (b.size - 1))
    p = betainc(df / 2.0, 0.5, df / (df + t * t))
    return float(t), float(min(1.0, p))


def privacy_protection(auc_value: float) -> float:
    """P = 2 (1 - AUC); AUC below 0.5 gives P above 1 and is left visible."""
    if not 0.0 <= auc_value <= 1.0:
        raise ValueError(f"AUC must be in [0, 1], got {auc_value}")
    return 2.0 * (1.0 - auc_value)


def dice_score(pred: Mask, truth: Mask) -> float:
    a = np.asarray(pred.data if isinstance(pred, Mask) else pred).astype(bool)
    b = np.asarray(truth.data if isinstance(truth, Mask) else truth).astype(bool)
    if a.shape != b.shape:
        raise ValueError(f"mask grids differ: {a.shape} vs {b.shape}")
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(a, b).sum() / total)


def mean_dice(segmenter, samples: Sequence[Sample], threshold: float = 0.5) -> float:
    if not samples:
        raise ValueError("validation set is empty")
    return float(np.mean([dice_score(segmenter.segment(s.volume, threshold), s.mask)
                          for s in samples]))


def utility_synthetic(segmenter, samples: Sequence[Sample], threshold: float = 0.5) -> float:
    """Mean DSC of a synthetic-trained segmenter on real validation samples.

    ``segmenter`` is anything with ``segment(volume, threshold) -> Mask``.
    """
    return mean_dice(segmenter, samples, threshold)


def utility_augmentation(aug_segmenter, baseline_segmenter, samples: Sequence[Sample],
                         threshold: float = 0.5) -> float:
    """Gain in mean DSC from adding synthetic training data to a real set."""
    return (mean_dice(aug_segmenter, samples, threshold)
            - mean_dice(baseline_segmenter, samples, threshold))
