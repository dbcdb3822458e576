"""Dataset-pooled instance matching metrics: P, AP, PPV, FNR, APPV, AFNR and AJI."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import as_label_map, check_same_shape
from .errors import EmptyDatasetError, MetricError, NoGroundTruthError, NoPredictionsError, ValidationError

logger = logging.getLogger(__name__)

AP_THRESHOLDS: Tuple[float, ...] = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
CURVE_THRESHOLDS: Tuple[float, ...] = AP_THRESHOLDS + (1.0,)


def _key(tau: float) -> float:
    return round(float(tau), 6)


def _as_fraction(tau: float) -> Fraction:
    return Fraction(str(_key(tau)))


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """|a & b| / |a | b| for two boolean pixel masks."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    check_same_shape(a, b, "iou")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        raise ValidationError("iou of two empty pixel sets is undefined")
    return int(np.count_nonzero(a & b)) / union


@dataclass(frozen=True)
class InstanceMatch:
    pred_label: int
    gt_label: Optional[int]
    intersection: int = 0
    union: int = 1

    @property
    def iou(self) -> float:
        return self.intersection / self.union if self.gt_label is not None else 0.0

    def meets(self, tau: float) -> bool:
        """IoU >= tau, decided exactly on the integer pixel counts."""
        if self.gt_label is None:
            return False
        frac = _as_fraction(tau)
        return self.intersection * frac.denominator >= frac.numerator * self.union


@dataclass
class ImageMatch:
    matches: List[InstanceMatch]
    unmatched_gt: List[int]
    n_pred: int
    n_gt: int


class Overlap:
    """Pixel overlap table between the instances of two label maps."""

    def __init__(self, pred: np.ndarray, gt: np.ndarray) -> None:
        pred = as_label_map(pred)
        gt = as_label_map(gt)
        check_same_shape(pred, gt, "overlap")
        self.pred_labels, pred_idx = np.unique(pred, return_inverse=True)
        self.gt_labels, gt_idx = np.unique(gt, return_inverse=True)
        n_p, n_g = self.pred_labels.size, self.gt_labels.size
        joint = np.bincount(pred_idx.ravel() * n_g + gt_idx.ravel(), minlength=n_p * n_g).reshape(n_p, n_g)
        # drop the background row/column when present
        p_keep = self.pred_labels != 0
        g_keep = self.gt_labels != 0
        self.pred_area = joint.sum(axis=1)[p_keep].astype(np.int64)
        self.gt_area = joint.sum(axis=0)[g_keep].astype(np.int64)
        self.inter = joint[np.ix_(p_keep, g_keep)].astype(np.int64)
        self.pred_labels = self.pred_labels[p_keep]
        self.gt_labels = self.gt_labels[g_keep]
        self.union = self.pred_area[:, None] + self.gt_area[None, :] - self.inter

    def iou_matrix(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.union > 0, self.inter / np.maximum(self.union, 1), 0.0)


def match_image(pred: np.ndarray, gt: np.ndarray) -> ImageMatch:
    """Pair each prediction with its max-IoU ground-truth instance, one-to-one.

    Predictions claim their best instance in order of descending IoU (ties:
    smaller prediction label first); a prediction whose best instance is
    already taken, or that overlaps nothing, stays unmatched.
    """
    table = Overlap(pred, gt)
    ious = table.iou_matrix()
    n_pred, n_gt = ious.shape
    best: List[Tuple[float, int, int]] = []
    for i in range(n_pred):
        if n_gt == 0 or table.inter[i].max() == 0:
            continue
        j = int(np.argmax(ious[i]))  # first maximum = smallest gt label
        best.append((float(ious[i, j]), i, j))
    best.sort(key=lambda item: (-item[0], table.pred_labels[item[1]]))

    claimed: Dict[int, int] = {}
    for _, i, j in best:
        if j not in claimed:
            claimed[j] = i
    by_pred = {i: j for j, i in claimed.items()}

    matches = []
    for i in range(n_pred):
        label = int(table.pred_labels[i])
        j = by_pred.get(i)
        if j is None:
            matches.append(InstanceMatch(label, None))
        else:
            matches.append(
                InstanceMatch(label, int(table.gt_labels[j]), int(table.inter[i, j]), int(table.union[i, j]))
            )
    unmatched = [int(table.gt_labels[j]) for j in range(n_gt) if j not in claimed]
    return ImageMatch(matches=matches, unmatched_gt=unmatched, n_pred=n_pred, n_gt=n_gt)


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass
class MatchTally:
    """TP/FP/FN per IoU threshold, pooled over images."""

    counts: Dict[float, Counts] = field(default_factory=dict)

    @property
    def thresholds(self) -> Tuple[float, ...]:
        return tuple(sorted(self.counts))

    def at(self, tau: float) -> Counts:
        try:
            return self.counts[_key(tau)]
        except KeyError:
            raise MetricError(f"tally has no entry for threshold {tau}") from None

    def __add__(self, other: "MatchTally") -> "MatchTally":
        keys = set(self.counts) | set(other.counts)
        return MatchTally({k: self.counts.get(k, Counts()) + other.counts.get(k, Counts()) for k in keys})


def tally(images: Iterable[ImageMatch], thresholds: Sequence[float] = CURVE_THRESHOLDS) -> MatchTally:
    for tau in thresholds:
        if not 0.0 < tau <= 1.0:
            raise ValidationError(f"IoU threshold must lie in (0, 1], got {tau}")
    result = MatchTally({_key(t): Counts() for t in thresholds})
    for image in images:
        for tau in thresholds:
            tp = sum(1 for m in image.matches if m.meets(tau))
            result.counts[_key(tau)] += Counts(tp, image.n_pred - tp, image.n_gt - tp)
    return result


def precision_at(t: MatchTally, tau: float) -> float:
    """TP / (TP + FP + FN)."""
    c = t.at(tau)
    total = c.tp + c.fp + c.fn
    if total == 0:
        raise EmptyDatasetError("no predictions and no ground truth: precision undefined")
    return c.tp / total


def ppv_at(t: MatchTally, tau: float) -> float:
    """TP / (TP + FP)."""
    c = t.at(tau)
    if c.tp + c.fp == 0:
        raise NoPredictionsError("no predictions: PPV undefined")
    return c.tp / (c.tp + c.fp)


def fnr_at(t: MatchTally, tau: float) -> float:
    """FN / (TP + FN)."""
    c = t.at(tau)
    if c.tp + c.fn == 0:
        raise NoGroundTruthError("no ground-truth instances: FNR undefined")
    return c.fn / (c.tp + c.fn)


def _sweep_mean(fn, t: MatchTally) -> float:
    missing = [tau for tau in AP_THRESHOLDS if _key(tau) not in t.counts]
    if missing:
        raise MetricError(f"tally is missing thresholds {missing}")
    return float(sum(fn(t, tau) for tau in AP_THRESHOLDS) / len(AP_THRESHOLDS))


def average_precision(t: MatchTally) -> float:
    return _sweep_mean(precision_at, t)


def appv(t: MatchTally) -> float:
    return _sweep_mean(ppv_at, t)


def afnr(t: MatchTally) -> float:
    return _sweep_mean(fnr_at, t)


@dataclass(frozen=True)
class AJIParts:
    intersection: int = 0
    union: int = 0

    def __add__(self, other: "AJIParts") -> "AJIParts":
        return AJIParts(self.intersection + other.intersection, self.union + other.union)

    @property
    def value(self) -> float:
        if self.union == 0:
            raise EmptyDatasetError("AJI undefined: both label maps are empty")
        return self.intersection / self.union


def aji_parts(pred: np.ndarray, gt: np.ndarray) -> AJIParts:
    """Numerator and denominator of the Aggregated Jaccard Index for one image.

    Ground-truth instances are visited in ascending label order and each takes
    the still-unused prediction with the highest IoU (ties: smaller label).
    Unused predictions add their area to the denominator.
    """
    table = Overlap(pred, gt)
    ious = table.iou_matrix()
    used = np.zeros(table.pred_labels.size, dtype=bool)
    inter_sum = 0
    union_sum = 0
    for j in range(table.gt_labels.size):
        candidates = np.where(used | (table.inter[:, j] == 0), -1.0, ious[:, j])
        if candidates.size and candidates.max() > 0:
            i = int(np.argmax(candidates))
            used[i] = True
            inter_sum += int(table.inter[i, j])
            union_sum += int(table.union[i, j])
        else:
            union_sum += int(table.gt_area[j])
    union_sum += int(table.pred_area[~used].sum())
    return AJIParts(inter_sum, union_sum)


def aji(pred: np.ndarray, gt: np.ndarray) -> float:
    return aji_parts(pred, gt).value


def ratio_or_none(fn, t: MatchTally, tau: float) -> Optional[float]:
    """The metric value, or None where its denominator is zero."""
    try:
        return fn(t, tau)
    except MetricError:
        return None
