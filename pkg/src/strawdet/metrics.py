"""Detection evaluation: IoU, greedy matching, precision/recall, AP and mAP.

AP is the 101-point interpolated area under the monotone precision envelope,
computed per class over the confidence-sorted detections of the whole dataset.
A detection is a true positive when its best still-unmatched ground truth of the
same class overlaps it with IoU strictly greater than the threshold.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)

RECALL_POINTS = np.linspace(0.0, 1.0, 101)


def iou(a, b) -> float:
    """IoU of two (x1, y1, x2, y2) boxes."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) xyxy arrays."""
    a = np.asarray(a, np.float64).reshape(-1, 4)
    b = np.asarray(b, np.float64).reshape(-1, 4)
    iw = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    ih = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = iw * ih
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def cxcywh_to_xyxy(cx, cy, w, h):
    return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


@dataclass
class GtBox:
    class_id: int
    cx: float
    cy: float
    w: float
    h: float
    matched: bool = False

    @property
    def xyxy(self):
        return cxcywh_to_xyxy(self.cx, self.cy, self.w, self.h)


class ScoredBox(NamedTuple):
    """A prediction in the same (normalised) frame as the ground truth."""

    class_id: int
    score: float
    cx: float
    cy: float
    w: float
    h: float

    @property
    def xyxy(self):
        return cxcywh_to_xyxy(self.cx, self.cy, self.w, self.h)


class MatchResult(NamedTuple):
    tp: list[bool]  # per detection, in the order given
    fn: int


def match_detections(dets: Sequence[ScoredBox], gts: Sequence[GtBox], iou_thresh: float = 0.5) -> MatchResult:
    """Greedy one-to-one matching for a single image.

    ``dets`` must already be sorted by descending score; equal scores keep input order.
    Resets and then updates the ``matched`` flag of every GtBox.
    """
    for g in gts:
        g.matched = False
    flags = []
    for d in dets:
        best, best_iou = None, iou_thresh
        for g in gts:
            if g.matched or g.class_id != d.class_id:
                continue
            v = iou(d.xyxy, g.xyxy)
            if v > best_iou:
                best, best_iou = g, v
        if best is not None:
            best.matched = True
        flags.append(best is not None)
    return MatchResult(flags, sum(1 for g in gts if not g.matched))


class PR(NamedTuple):
    precision: float
    recall: float
    defined: bool  # False when a denominator was zero


def precision_recall(tp: int, fp: int, fn: int) -> PR:
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return PR(p, r, bool(tp + fp and tp + fn))


@dataclass
class PrCurve:
    class_id: int
    recall: np.ndarray
    precision: np.ndarray
    n_gt: int


def pr_curve(scores: Sequence[float], tp: Sequence[bool], n_gt: int, class_id: int = 0) -> PrCurve:
    """Sweep detections in descending score (stable) order."""
    order = np.argsort(-np.asarray(scores, np.float64), kind="stable")
    tps = np.asarray(tp, bool)[order]
    ctp = np.cumsum(tps)
    cfp = np.cumsum(~tps)
    recall = ctp / n_gt if n_gt else np.zeros(len(tps))
    precision = ctp / np.maximum(ctp + cfp, 1)
    return PrCurve(class_id, recall.astype(np.float64), precision.astype(np.float64), n_gt)


def average_precision(curve: PrCurve) -> float:
    """101-point interpolated AP; NaN when the class has no ground truth."""
    if curve.n_gt == 0:
        return math.nan
    if len(curve.recall) == 0:
        return 0.0
    # envelope: precision at recall r becomes the best precision at any recall >= r
    env = np.maximum.accumulate(curve.precision[::-1])[::-1]
    idx = np.searchsorted(curve.recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(env), env[np.minimum(idx, len(env) - 1)], 0.0)
    return float(sampled.mean())


def mean_ap(aps: Sequence[float]) -> float:
    defined = [a for a in aps if not math.isnan(a)]
    if not defined:
        raise ValueError("mAP undefined: no class has ground truth")
    return float(sum(defined) / len(defined))


@dataclass
class ClassReport:
    class_id: int
    name: str
    count: int
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    ap: float
    curve: PrCurve | None = field(default=None, repr=False)


@dataclass
class EvalReport:
    classes: list[ClassReport]
    map50: float
    iou_thresh: float = 0.5

    @property
    def totals(self) -> dict[str, int]:
        return {k: sum(getattr(c, k) for c in self.classes) for k in ("count", "tp", "fp", "fn")}

    def to_text(self) -> str:
        lines = [f"{'Maturity':<14}{'Number':>8}{'Precision':>11}{'Recall':>9}{'AP(%)':>8}"]
        for c in self.classes:
            ap = "n/a" if math.isnan(c.ap) else f"{100 * c.ap:.1f}"
            lines.append(f"{c.name:<14}{c.count:>8}{100 * c.precision:>11.1f}{100 * c.recall:>9.1f}{ap:>8}")
        lines.append(f"mAP@{self.iou_thresh:g}: {100 * self.map50:.1f}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        rows = ["class,count,precision,recall,ap"]
        for c in self.classes:
            ap = "" if math.isnan(c.ap) else f"{c.ap:.6f}"
            rows.append(f"{c.name},{c.count},{c.precision:.6f},{c.recall:.6f},{ap}")
        rows.append(f"mAP,,,,{self.map50:.6f}")
        return "\n".join(rows) + "\n"


def evaluate(
    images: Sequence[tuple[Sequence[ScoredBox], Sequence[GtBox]]],
    class_names: Sequence[str],
    iou_thresh: float = 0.5,
) -> EvalReport:
    """Evaluate per-image (detections, ground truths) pairs over ``len(class_names)`` classes."""
    nc = len(class_names)
    scores = [[] for _ in range(nc)]
    flags = [[] for _ in range(nc)]
    n_gt = [0] * nc
    for dets, gts in images:
        for g in gts:
            n_gt[g.class_id] += 1
        ordered = sorted(dets, key=lambda d: -d.score)
        res = match_detections(ordered, gts, iou_thresh)
        for d, ok in zip(ordered, res.tp):
            scores[d.class_id].append(d.score)
            flags[d.class_id].append(ok)

    reports = []
    for c in range(nc):
        tp = int(sum(flags[c]))
        fp = len(flags[c]) - tp
        pr = precision_recall(tp, fp, n_gt[c] - tp)
        curve = pr_curve(scores[c], flags[c], n_gt[c], c)
        ap = average_precision(curve)
        if math.isnan(ap):
            log.warning("class %s has no ground truth; excluded from mAP", class_names[c])
        reports.append(ClassReport(c, class_names[c], n_gt[c], tp, fp, n_gt[c] - tp, pr.precision, pr.recall, ap, curve))
    return EvalReport(reports, mean_ap([r.ap for r in reports]), iou_thresh)
