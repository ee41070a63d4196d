import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import box_iou_ref, ideal_heads
from strawdet.errors import ShapeError
from strawdet.detect_post import (
    CLASS_COLORS,
    PAD_VALUE,
    Detection,
    LetterboxTransform,
    decode,
    format_detections,
    letterbox,
    nms,
    parse_detections,
    pixel_rect,
    postprocess,
    render,
    resize_bilinear,
)
from strawdet.graph import DEFAULT_ANCHORS

ANCHORS_P3_ONLY = ((10, 13), (16, 30), (33, 23))


def zero_heads(size=64, nc=3):
    return [np.zeros((1, 3 * (nc + 5), size // s, size // s), np.float32) for s in (8, 16, 32)]


# --- letterbox ------------------------------------------------------------------

def test_letterbox_camera_resolution():
    img = np.zeros((1242, 2208, 3), np.uint8)
    out, t = letterbox(img, 640)
    assert out.shape == (640, 640, 3)
    assert t.scale == pytest.approx(0.289855, abs=1e-6)
    assert (t.pad_x, t.pad_y) == (0, 140)
    assert (out[:140] == PAD_VALUE).all() and (out[500:] == PAD_VALUE).all()
    assert (out[140:500] == 0).all()


def test_letterbox_identity():
    img = np.random.default_rng(0).integers(0, 256, (640, 640, 3), dtype=np.uint8)
    out, t = letterbox(img, 640)
    assert t.scale == 1.0 and (t.pad_x, t.pad_y) == (0, 0)
    assert np.array_equal(out, img)


def test_letterbox_zero_size():
    with pytest.raises(ShapeError):
        letterbox(np.zeros((0, 10, 3), np.uint8))


@settings(max_examples=100, deadline=None)
@given(st.integers(16, 3000), st.integers(16, 3000), st.floats(0.05, 0.95), st.floats(0.05, 0.95),
       st.floats(1, 400), st.floats(1, 400))
def test_letterbox_round_trip(w, h, fx, fy, bw, bh):
    scale = min(640 / w, 640 / h)
    t = LetterboxTransform(scale, (640 - round(w * scale)) // 2, (640 - round(h * scale)) // 2, w, h, 640)
    d = Detection(fx * w, fy * h, bw, bh, 0, 0.5)
    back = t.to_original(t.to_network(d))
    assert max(abs(back.cx - d.cx), abs(back.cy - d.cy), abs(back.w - d.w), abs(back.h - d.h)) <= 0.5


def test_resize_constant_image_stays_constant():
    img = np.full((7, 13, 3), 77, np.uint8)
    assert (resize_bilinear(img, 31, 5) == 77).all()


# --- decode -----------------------------------------------------------------------

def test_decode_zero_logits_first_cell():
    dets = decode(zero_heads(), DEFAULT_ANCHORS, conf_thresh=0.2)
    first = dets[0]
    assert (first.cx, first.cy, first.w, first.h) == (4.0, 4.0, 10.0, 13.0)
    assert first.score == pytest.approx(0.25)


def test_decode_unreachable_threshold():
    assert decode(zero_heads(), DEFAULT_ANCHORS, conf_thresh=1.1) == []


def test_decode_saturation():
    heads = zero_heads()
    heads[0][0, 4, 0, 0] = 1e9
    heads[0][0, 5, 0, 0] = 1e9
    dets = decode(heads, DEFAULT_ANCHORS, conf_thresh=0.9)
    assert len(dets) == 1 and abs(dets[0].score - 1.0) <= 1e-6


def test_decode_channel_mismatch():
    with pytest.raises(ShapeError):
        decode(zero_heads(nc=2), DEFAULT_ANCHORS, nc=3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 0.9), st.floats(0.0, 0.9))
def test_decode_monotone_and_positive(seed, t1, t2):
    rng = np.random.default_rng(seed)
    heads = [rng.normal(0, 3, h.shape).astype(np.float32) for h in zero_heads()]
    lo, hi = sorted((t1, t2))
    a = decode(heads, DEFAULT_ANCHORS, lo)
    b = decode(heads, DEFAULT_ANCHORS, hi)
    assert set(b) <= set(a)
    assert all(d.w > 0 and d.h > 0 and 0 <= d.score <= 1 for d in a)


# --- nms --------------------------------------------------------------------------

def box_pair_iou_09():
    # 100x100 vs 100x100 shifted so that IoU = 0.9: overlap width o with o/(200-o) = 0.9
    o = 0.9 * 200 / 1.9
    return Detection(50, 50, 100, 100, 0, 0.9), Detection(50 + 100 - o, 50, 100, 100, 0, 0.8)


def test_nms_singleton():
    d = Detection(10, 10, 5, 5, 1, 0.3)
    assert nms([d], 0.45) == [d]


def test_nms_suppresses_overlap():
    a, b = box_pair_iou_09()
    assert box_iou_ref(a.xyxy, b.xyxy) == pytest.approx(0.9)
    assert nms([b, a], 0.45) == [a]


def test_nms_class_aware():
    a, b = box_pair_iou_09()
    b = Detection(b.cx, b.cy, b.w, b.h, 2, b.score)
    assert nms([a, b], 0.45) == [a, b]


detections = st.lists(
    st.builds(Detection, st.floats(0, 100), st.floats(0, 100), st.floats(1, 50), st.floats(1, 50),
              st.integers(0, 2), st.floats(0, 1)),
    max_size=25,
)


@settings(max_examples=100, deadline=None)
@given(detections, st.floats(0.1, 0.9))
def test_nms_properties(dets, thresh):
    kept = nms(dets, thresh)
    assert nms(kept, thresh) == kept
    assert all(k in dets for k in kept)
    assert [k.score for k in kept] == sorted((k.score for k in kept), reverse=True)
    for i, a in enumerate(kept):
        for b in kept[i + 1 :]:
            if a.class_id == b.class_id:
                assert box_iou_ref(a.xyxy, b.xyxy) < thresh


# --- render -----------------------------------------------------------------------

def test_render_empty_is_noop():
    img = np.random.default_rng(1).integers(0, 256, (40, 50, 3), dtype=np.uint8)
    assert np.array_equal(render(img, []), img)


@pytest.mark.parametrize("cls", [0, 1, 2])
def test_render_border_pixels(cls):
    img = np.zeros((60, 80, 3), np.uint8)
    det = Detection(40, 30, 30, 20, cls, 0.9)  # rect (25, 20)-(55, 40)
    out = render(img, [det])
    changed = (out != img).any(axis=2)
    x1, y1, x2, y2 = pixel_rect(det)
    w, h = x2 - x1, y2 - y1
    assert changed.sum() == 2 * 2 * (w + h) - 16
    assert (out[changed] == CLASS_COLORS[cls]).all()
    assert not changed[y1 + 2 : y2 - 2, x1 + 2 : x2 - 2].any()
    assert not changed[:y1].any() and not changed[y2:].any()


def test_render_colors():
    assert CLASS_COLORS == ((255, 0, 0), (255, 165, 0), (255, 105, 180))


def test_render_clips_outside_box():
    img = np.zeros((20, 20, 3), np.uint8)
    out = render(img, [Detection(0, 0, 30, 30, 0, 0.5), Detection(500, 500, 10, 10, 1, 0.5)])
    assert out.shape == img.shape
    assert (out[:15, 14] == (255, 0, 0)).all()


def test_render_labels_optional():
    img = np.zeros((60, 80, 3), np.uint8)
    det = Detection(40, 30, 30, 20, 2, 0.87)
    assert (render(img, [det], labels=True) != render(img, [det])).any()


# --- text format ------------------------------------------------------------------

def test_detection_text_round_trip():
    dets = [Detection(12.5, 7.25, 3.0, 4.0, 1, 0.875)]
    text = format_detections(dets)
    assert text == "1 0.8750 12.5000 7.2500 3.0000 4.0000\n"
    assert parse_detections(text) == dets


# --- full pipeline ------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_ideal_logits_recover_centers(seed):
    rng = np.random.default_rng(seed)
    w, h = int(rng.integers(600, 2400)), int(rng.integers(600, 2400))
    _, t = letterbox(np.zeros((h, w, 3), np.uint8), 640)
    gts = []
    for k in range(3):
        # separate horizontal bands so no two boxes share a grid cell
        cx, cy = rng.uniform(0.1 + 0.3 * k, 0.3 + 0.3 * k) * w, rng.uniform(0.15, 0.85) * h
        gts.append(Detection(cx, cy, 60 / t.scale, 70 / t.scale, k, 1.0))
    net = [t.to_network(g) for g in gts]
    heads = ideal_heads([(n.cx, n.cy, n.w, n.h, n.class_id) for n in net], (640, 640), 3, DEFAULT_ANCHORS)
    got = postprocess(heads, t, conf_thresh=0.5)
    assert len(got) == 3
    for g in gts:
        match = [d for d in got if d.class_id == g.class_id][0]
        assert abs(match.cx - g.cx) <= 1 and abs(match.cy - g.cy) <= 1
