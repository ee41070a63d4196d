import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import box_iou_ref, max_matching
from strawdet.metrics import (
    GtBox,
    ScoredBox,
    average_precision,
    evaluate,
    iou,
    iou_matrix,
    match_detections,
    mean_ap,
    pr_curve,
    precision_recall,
)

NAMES = ("immature", "nearly_mature", "mature")


def shifted(gt: GtBox, target_iou: float, score: float) -> ScoredBox:
    """Same-size box shifted along x so that its IoU with ``gt`` equals ``target_iou``."""
    overlap = 2 * target_iou * gt.w / (1 + target_iou)
    return ScoredBox(gt.class_id, score, gt.cx + gt.w - overlap, gt.cy, gt.w, gt.h)


def test_iou_examples():
    assert iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
    assert iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
    assert iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-12)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10), st.floats(0.1, 5), st.floats(0.1, 5)), min_size=1, max_size=6))
def test_iou_matrix_matches_reference(raw):
    boxes = np.array([(x, y, x + w, y + h) for x, y, w, h in raw])
    m = iou_matrix(boxes, boxes)
    for i, j in itertools.product(range(len(boxes)), repeat=2):
        assert m[i, j] == pytest.approx(box_iou_ref(boxes[i], boxes[j]), abs=1e-12)
        assert 0.0 <= m[i, j] <= 1.0 + 1e-12


@pytest.mark.parametrize("value,tp,fp,fn", [(0.6, 1, 0, 0), (0.4, 0, 1, 1)])
def test_match_threshold(value, tp, fp, fn):
    gt = GtBox(0, 0.5, 0.5, 0.2, 0.2)
    det = shifted(gt, value, 0.9)
    assert box_iou_ref(det.xyxy, gt.xyxy) == pytest.approx(value)
    res = match_detections([det], [gt])
    assert (sum(res.tp), len(res.tp) - sum(res.tp), res.fn) == (tp, fp, fn)


def test_match_single_gt_two_dets():
    gt = GtBox(1, 0.5, 0.5, 0.2, 0.2)
    res = match_detections([shifted(gt, 0.9, 0.9), shifted(gt, 0.8, 0.8)], [gt])
    assert res.tp == [True, False] and res.fn == 0


def test_match_ignores_other_class():
    gt = GtBox(0, 0.5, 0.5, 0.2, 0.2)
    res = match_detections([ScoredBox(1, 0.9, 0.5, 0.5, 0.2, 0.2)], [gt])
    assert res.tp == [False] and res.fn == 1


def test_precision_recall_examples():
    assert precision_recall(3, 1, 0)[:2] == (0.75, 1.0)
    pr = precision_recall(0, 0, 4)
    assert pr.precision == 0.0 and not pr.defined
    assert precision_recall(7, 0, 0) == (1.0, 1.0, True)
    with pytest.raises(ValueError):
        precision_recall(-1, 0, 0)


def test_ap_hand_cases():
    assert average_precision(pr_curve([0.9], [True], 1)) == pytest.approx(1.0, abs=1e-6)
    assert average_precision(pr_curve([0.9, 0.8], [False, True], 1)) == pytest.approx(0.5, abs=1e-6)
    assert average_precision(pr_curve([0.9, 0.8], [True, False], 1)) == pytest.approx(1.0, abs=1e-6)


def test_ap_edge_cases():
    assert math.isnan(average_precision(pr_curve([0.5], [False], 0)))
    assert average_precision(pr_curve([], [], 3)) == 0.0


def test_mean_ap_table_rows():
    assert mean_ap([0.821, 0.735, 0.866]) == pytest.approx(0.807, abs=5e-4)
    assert mean_ap([0.715, 0.672, 0.816]) == pytest.approx(0.734, abs=5e-4)
    assert mean_ap([0.42]) == 0.42
    assert mean_ap([0.5, math.nan]) == 0.5
    with pytest.raises(ValueError):
        mean_ap([math.nan])


sweeps = st.integers(1, 20).flatmap(lambda n: st.tuples(
    st.lists(st.integers(1, 1000).map(lambda i: i / 1000), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n),
))


@settings(max_examples=100)
@given(sweeps, st.integers(0, 5))
def test_ap_invariant_under_monotone_rescaling(sweep, extra_gt):
    scores, tp = sweep
    n_gt = sum(tp) + extra_gt
    if n_gt == 0:
        return
    base = average_precision(pr_curve(scores, tp, n_gt))
    for f in (lambda s: s ** 3, lambda s: 0.1 + 0.5 * s, lambda s: math.log(s) + 10):
        assert average_precision(pr_curve([f(s) for s in scores], tp, n_gt)) == pytest.approx(base, abs=1e-12)
    assert 0.0 <= base <= 1.0


@settings(max_examples=100)
@given(sweeps, st.integers(0, 5))
def test_low_fp_never_increases_ap(sweep, extra_gt):
    scores, tp = sweep
    n_gt = sum(tp) + extra_gt
    if n_gt == 0:
        return
    before = average_precision(pr_curve(scores, tp, n_gt))
    after = average_precision(pr_curve(scores + [min(scores) / 2], tp + [False], n_gt))
    assert after <= before + 1e-12


def test_ap_one_iff_perfect_prefix():
    # all TPs before any FP and every GT found
    assert average_precision(pr_curve([0.9, 0.8, 0.1], [True, True, False], 2)) == pytest.approx(1.0)
    assert average_precision(pr_curve([0.9, 0.8], [True, True], 3)) < 1.0


def enumerate_instances():
    """Every assignment of up to 5 dets onto up to 3 disjoint GTs (or onto nothing)."""
    gts_all = [GtBox(0, 0.15 + 0.3 * i, 0.5, 0.1, 0.1) for i in range(3)]
    ious = (0.55, 0.7, 0.95, 0.3)
    for n_gt in range(4):
        for n_det in range(6):
            for targets in itertools.product(range(-1, n_gt), repeat=n_det):
                dets = []
                for k, g in enumerate(targets):
                    score = 1.0 - 0.1 * ((k * 7) % 5)
                    if g < 0:
                        dets.append(ScoredBox(0, score, 0.5, 0.9, 0.05, 0.05))
                    else:
                        dets.append(shifted(gts_all[g], ious[k % len(ious)], score))
                yield dets, gts_all[:n_gt]


def test_greedy_matches_exhaustive_oracle():
    count = 0
    for dets, gts in enumerate_instances():
        table = [[box_iou_ref(d.xyxy, g.xyxy) for g in gts] for d in dets]
        assert all(sum(v > 0.5 for v in row) <= 1 for row in table)
        ordered = sorted(dets, key=lambda d: -d.score)
        res = match_detections(ordered, [GtBox(g.class_id, g.cx, g.cy, g.w, g.h) for g in gts])
        assert sum(res.tp) == max_matching(table, 0.5)
        count += 1
    assert count == sum((g + 1) ** d for g in range(4) for d in range(6))


def test_evaluate_report():
    gts = [GtBox(0, 0.3, 0.3, 0.2, 0.2), GtBox(2, 0.7, 0.7, 0.2, 0.2)]
    dets = [ScoredBox(0, 0.9, 0.3, 0.3, 0.2, 0.2), ScoredBox(2, 0.8, 0.7, 0.7, 0.2, 0.2),
            ScoredBox(2, 0.3, 0.1, 0.9, 0.05, 0.05)]
    report = evaluate([(dets, gts)], NAMES)
    assert report.map50 == pytest.approx(1.0)
    assert report.totals == {"count": 2, "tp": 2, "fp": 1, "fn": 0}
    assert math.isnan(report.classes[1].ap)
    text = report.to_text()
    assert text.splitlines()[0].split() == ["Maturity", "Number", "Precision", "Recall", "AP(%)"]
    assert "mAP@0.5: 100.0" in text
    csv = report.to_csv().splitlines()
    assert csv[0] == "class,count,precision,recall,ap"
    assert csv[3] == "mature,1,0.500000,1.000000,1.000000"
    assert csv[-1] == "mAP,,,,1.000000"


def test_evaluate_all_false_positives():
    gt = GtBox(0, 0.3, 0.3, 0.2, 0.2)
    det = ScoredBox(0, 0.9, 0.4, 0.4, 0.2, 0.2)  # IoU 1/7
    report = evaluate([([det], [gt])], NAMES)
    assert report.classes[0].tp == 0 and report.classes[0].fp == 1
    assert report.map50 == 0.0
