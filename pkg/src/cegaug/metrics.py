"""Detection matching and per-image precision/recall.

A predicted box is a detection for a ground-truth box when their IoU exceeds
0.5. An image counts as misclassified when its precision or recall falls
strictly below 0.75; exactly 0.75 is still correct.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

IOU_THRESHOLD = 0.5
MISCLASSIFICATION_THRESHOLD = 0.75

Box = tuple[float, float, float, float]  # x_min, y_min, x_max, y_max


@dataclass(frozen=True)
class Detection:
    category: str
    box: Box
    score: float

    def __post_init__(self):
        x_min, y_min, x_max, y_max = self.box
        if not (x_min < x_max and y_min < y_max):
            raise ValueError(f"degenerate box {self.box}")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class EvalResult:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    misclassified: bool

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "EvalResult":
        # With no predictions precision defaults to 1, with no ground truths
        # recall defaults to 1 (the 0/0 case is treated as vacuously correct).
        precision = tp / (tp + fp) if tp + fp > 0 else 1.0
        recall = tp / (tp + fn) if tp + fn > 0 else 1.0
        misclassified = precision < MISCLASSIFICATION_THRESHOLD or recall < MISCLASSIFICATION_THRESHOLD
        return cls(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall,
                   misclassified=misclassified)


def iou(b1: Box, b2: Box) -> float:
    """Intersection area over union area; 0 for disjoint boxes."""
    ix = max(0.0, min(b1[2], b2[2]) - max(b1[0], b2[0]))
    iy = max(0.0, min(b1[3], b2[3]) - max(b1[1], b2[1]))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    a1 = (b1[2] - b1[0]) * (b1[3] - b1[1])
    a2 = (b2[2] - b2[0]) * (b2[3] - b2[1])
    return inter / (a1 + a2 - inter)


def match(preds: Sequence[Detection], gts: Sequence[tuple[str, Box]]) -> EvalResult:
    """Greedy score-descending assignment of predictions to ground truths.

    Each prediction claims the unmatched same-category ground truth with the
    highest IoU, provided that IoU exceeds the 0.5 threshold. Unmatched
    predictions are false positives, unmatched ground truths false negatives.
    """
    order = sorted(range(len(preds)), key=lambda i: -preds[i].score)
    taken = [False] * len(gts)
    tp = 0
    for i in order:
        pred = preds[i]
        best_j = -1
        best_iou = IOU_THRESHOLD
        for j, (category, box) in enumerate(gts):
            if taken[j] or category != pred.category:
                continue
            v = iou(pred.box, box)
            if v > best_iou:
                best_iou = v
                best_j = j
        if best_j >= 0:
            taken[best_j] = True
            tp += 1
    fp = len(preds) - tp
    fn = len(gts) - tp
    return EvalResult.from_counts(tp=tp, fp=fp, fn=fn)


def average_accuracy(results: Sequence[EvalResult]) -> tuple[float, float]:
    """Mean per-image precision and recall over a test set."""
    if not results:
        raise ValueError("average accuracy over an empty result list")
    ap = sum(r.precision for r in results) / len(results)
    ar = sum(r.recall for r in results) / len(results)
    return ap, ar
