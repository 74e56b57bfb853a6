"""Segmentation metrics: frame accuracy, segmental edit score, F1@k.

All three follow the standard temporal-action-segmentation conventions:
the edit score is a normalized Levenshtein distance between run-length
collapsed class sequences, and F1@k counts a predicted segment as a true
positive when its IoU against a same-class, not-yet-matched ground-truth
segment reaches the threshold.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Segment, segments_from_labels

F1_THRESHOLDS = (0.10, 0.25, 0.50)


@dataclass(frozen=True)
class MetricReport:
    """Scores (percentages) for one prediction / ground-truth pair."""

    accuracy: float
    edit_score: float
    f1_10: float
    f1_25: float
    f1_50: float
    num_predicted_segments: int
    num_ground_truth_segments: int

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "edit_score": self.edit_score,
            "f1_10": self.f1_10,
            "f1_25": self.f1_25,
            "f1_50": self.f1_50,
            "num_predicted_segments": self.num_predicted_segments,
            "num_ground_truth_segments": self.num_ground_truth_segments,
        }


def accuracy(pred: np.ndarray, gt: np.ndarray) -> float:
    """Percentage of correctly labelled frames."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape or pred.size == 0:
        raise ValueError("label arrays must be nonempty and of equal length")
    return 100.0 * float(np.count_nonzero(pred == gt)) / pred.size


def _levenshtein(a: np.ndarray, b: np.ndarray) -> int:
    # Two-row DP over the collapsed class sequences.
    if a.size < b.size:
        a, b = b, a
    prev = np.arange(b.size + 1)
    for i in range(1, a.size + 1):
        cur = np.empty(b.size + 1, dtype=np.int64)
        cur[0] = i
        sub = prev[:-1] + (b != a[i - 1])
        for j in range(1, b.size + 1):
            cur[j] = min(cur[j - 1] + 1, prev[j] + 1, sub[j - 1])
        prev = cur
    return int(prev[-1])


def _collapse(labels: np.ndarray) -> np.ndarray:
    arr = np.asarray(labels, dtype=np.int64)
    if arr.size == 0:
        raise ValueError("label array is empty")
    return arr[np.concatenate(([True], arr[1:] != arr[:-1]))]


def edit_score(pred: np.ndarray, gt: np.ndarray) -> float:
    """100 * (1 - Levenshtein(collapsed pred, collapsed gt) / max length)."""
    p = _collapse(pred)
    g = _collapse(gt)
    distance = _levenshtein(p, g)
    return 100.0 * (1.0 - distance / max(p.size, g.size))


def _iou(a: Segment, b: Segment) -> float:
    inter = max(0, min(a.end, b.end) - max(a.start, b.start))
    union = max(a.end, b.end) - min(a.start, b.start)
    return inter / union


def f1_at(pred: np.ndarray, gt: np.ndarray, tau: float) -> float:
    """Segmental F1 at IoU threshold ``tau``.

    Predicted segments are matched in temporal order against their best
    same-class ground-truth segment; each ground-truth segment can be
    matched at most once. F1 is 0 when precision + recall is 0.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    pred_segments = segments_from_labels(pred)
    gt_segments = segments_from_labels(gt)
    matched = [False] * len(gt_segments)
    tp = 0
    fp = 0
    for p in pred_segments:
        best_iou = 0.0
        best_index = -1
        for index, g in enumerate(gt_segments):
            if g.label != p.label:
                continue
            iou = _iou(p, g)
            if iou > best_iou:
                best_iou = iou
                best_index = index
        if best_index >= 0 and best_iou >= tau and not matched[best_index]:
            matched[best_index] = True
            tp += 1
        else:
            fp += 1
    fn = len(gt_segments) - tp
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 100.0 * 2.0 * precision * recall / (precision + recall)


def report(pred: np.ndarray, gt: np.ndarray) -> MetricReport:
    """Bundle accuracy, edit score and F1 at the standard thresholds."""
    return MetricReport(
        accuracy=accuracy(pred, gt),
        edit_score=edit_score(pred, gt),
        f1_10=f1_at(pred, gt, F1_THRESHOLDS[0]),
        f1_25=f1_at(pred, gt, F1_THRESHOLDS[1]),
        f1_50=f1_at(pred, gt, F1_THRESHOLDS[2]),
        num_predicted_segments=len(segments_from_labels(pred)),
        num_ground_truth_segments=len(segments_from_labels(gt)),
    )


def aggregate_reports(reports: list[MetricReport]) -> MetricReport:
    """Mean of per-sequence percentages; segment counts are summed."""
    if not reports:
        raise ValueError("no reports to aggregate")
    return MetricReport(
        accuracy=float(np.mean([r.accuracy for r in reports])),
        edit_score=float(np.mean([r.edit_score for r in reports])),
        f1_10=float(np.mean([r.f1_10 for r in reports])),
        f1_25=float(np.mean([r.f1_25 for r in reports])),
        f1_50=float(np.mean([r.f1_50 for r in reports])),
        num_predicted_segments=int(sum(r.num_predicted_segments for r in reports)),
        num_ground_truth_segments=int(sum(r.num_ground_truth_segments for r in reports)),
    )
