"""Letterbox preprocessing, anchor decoding, class-aware NMS and box rendering.

Images are ``uint8`` arrays of shape (height, width, 3) in RGB order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ShapeError
from .graph import DEFAULT_ANCHORS, STRIDES
from .metrics import iou_matrix
from .tensor_ops import sigmoid

PAD_VALUE = 114
DEFAULT_CONF = 0.25
DEFAULT_NMS_IOU = 0.45

# immature red, nearly mature orange, mature pink
CLASS_COLORS = ((255, 0, 0), (255, 165, 0), (255, 105, 180))


@dataclass(frozen=True)
class Detection:
    cx: float
    cy: float
    w: float
    h: float
    class_id: int
    score: float

    @property
    def xyxy(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)


@dataclass(frozen=True)
class LetterboxTransform:
    scale: float
    pad_x: int
    pad_y: int
    orig_w: int
    orig_h: int
    target: int

    def to_network(self, det: Detection) -> Detection:
        return Detection(det.cx * self.scale + self.pad_x, det.cy * self.scale + self.pad_y,
                         det.w * self.scale, det.h * self.scale, det.class_id, det.score)

    def to_original(self, det: Detection) -> Detection:
        return Detection((det.cx - self.pad_x) / self.scale, (det.cy - self.pad_y) / self.scale,
                         det.w / self.scale, det.h / self.scale, det.class_id, det.score)


def resize_bilinear(img: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Bilinear resize with half-pixel centres and edge clamping."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    if (new_w, new_h) == (w, h):
        return img.copy()

    def axis(n_out, n_in):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        i0 = np.floor(src).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, fy = axis(new_h, h)
    x0, x1, fx = axis(new_w, w)
    f = img.astype(np.float64)
    top = f[y0][:, x0] * (1 - fx)[None, :, None] + f[y0][:, x1] * fx[None, :, None]
    bot = f[y1][:, x0] * (1 - fx)[None, :, None] + f[y1][:, x1] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def letterbox(img: np.ndarray, target: int = 640) -> tuple[np.ndarray, LetterboxTransform]:
    """Aspect-preserving resize, then symmetric gray padding to target x target."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] == 0 or img.shape[1] == 0:
        raise ShapeError(f"cannot letterbox image of shape {img.shape}", dim="size")
    h, w = img.shape[:2]
    scale = min(target / w, target / h)
    new_w = min(target, max(1, int(round(w * scale))))
    new_h = min(target, max(1, int(round(h * scale))))
    pad_x = (target - new_w) // 2
    pad_y = (target - new_h) // 2
    out = np.full((target, target, img.shape[2]), PAD_VALUE, np.uint8)
    out[pad_y : pad_y + new_h, pad_x : pad_x + new_w] = resize_bilinear(img, new_w, new_h)
    return out, LetterboxTransform(scale, pad_x, pad_y, w, h, target)


def image_to_tensor(img: np.ndarray) -> np.ndarray:
    """uint8 (h, w, 3) -> float32 (1, 3, h, w) in [0, 1]."""
    return np.ascontiguousarray(np.asarray(img, np.float32).transpose(2, 0, 1)[None] / 255.0)


def decode(
    heads: Sequence[np.ndarray],
    anchors=DEFAULT_ANCHORS,
    conf_thresh: float = DEFAULT_CONF,
    nc: int = 3,
    strides: Sequence[int] = STRIDES,
) -> list[Detection]:
    """Turn raw head logits into boxes in the network-input frame.

    Per cell and anchor: centre = (2*sig(t) - 0.5 + grid) * stride, size =
    anchor * (2*sig(t))**2, score = sig(obj) * max class sig.  A box is kept
    when its score is strictly above ``conf_thresh``.
    """
    no = nc + 5
    dets: list[Detection] = []
    for head, scale_anchors, stride in zip(heads, anchors, strides):
        head = np.asarray(head)
        na = len(scale_anchors)
        if head.ndim != 4 or head.shape[1] != na * no:
            raise ShapeError(f"head has {head.shape[1] if head.ndim == 4 else head.shape} channels, "
                             f"expected {na}*({nc}+5)={na * no}", dim="channels")
        _, _, ny, nx = head.shape
        t = sigmoid(head[0].astype(np.float64).reshape(na, no, ny, nx))
        cls_prob = t[:, 5:]
        cls_id = cls_prob.argmax(axis=1)
        score = t[:, 4] * np.take_along_axis(cls_prob, cls_id[:, None], axis=1)[:, 0]
        gy, gx = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
        aw = np.array([a[0] for a in scale_anchors], np.float64)[:, None, None]
        ah = np.array([a[1] for a in scale_anchors], np.float64)[:, None, None]
        cx = (2 * t[:, 0] - 0.5 + gx) * stride
        cy = (2 * t[:, 1] - 0.5 + gy) * stride
        bw = aw * (2 * t[:, 2]) ** 2
        bh = ah * (2 * t[:, 3]) ** 2
        for a, y, x in zip(*np.nonzero(score > conf_thresh)):
            dets.append(Detection(float(cx[a, y, x]), float(cy[a, y, x]), float(bw[a, y, x]), float(bh[a, y, x]),
                                  int(cls_id[a, y, x]), float(score[a, y, x])))
    return dets


def nms(dets: Sequence[Detection], iou_thresh: float = DEFAULT_NMS_IOU) -> list[Detection]:
    """Class-aware greedy suppression, highest score first (ties by input order).

    A box is dropped when its IoU with an already kept box of the same class is
    >= ``iou_thresh``; the output is sorted by descending score.
    """
    if not dets:
        return []
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    boxes = np.array([dets[i].xyxy for i in order])
    classes = np.array([dets[i].class_id for i in order])
    alive = np.ones(len(order), bool)
    keep = []
    for j in range(len(order)):
        if not alive[j]:
            continue
        keep.append(order[j])
        rest = np.nonzero(alive[j + 1 :] & (classes[j + 1 :] == classes[j]))[0] + j + 1
        if len(rest):
            ious = iou_matrix(boxes[j : j + 1], boxes[rest])[0]
            alive[rest[ious >= iou_thresh]] = False
    return [dets[i] for i in keep]


def postprocess(heads, transform: LetterboxTransform, anchors=DEFAULT_ANCHORS, nc: int = 3,
                conf_thresh: float = DEFAULT_CONF, nms_iou: float = DEFAULT_NMS_IOU) -> list[Detection]:
    """decode -> NMS -> map back to the original image frame."""
    kept = nms(decode(heads, anchors, conf_thresh, nc), nms_iou)
    return [transform.to_original(d) for d in kept]


def pixel_rect(det: Detection) -> tuple[int, int, int, int]:
    """Integer (x1, y1, x2, y2) with exclusive right/bottom edges."""
    x1, y1, x2, y2 = det.xyxy
    return int(round(x1)), int(round(y1)), int(round(x2)), int(round(y2))


def _fill_border(out, rect, color, thickness=2):
    h, w = out.shape[:2]
    x1, y1, x2, y2 = rect

    def clip(a, b, n):
        return max(a, 0), max(min(b, n), 0)

    oy0, oy1 = clip(y1, y2, h)
    ox0, ox1 = clip(x1, x2, w)
    iy0, iy1 = clip(y1 + thickness, y2 - thickness, h)
    ix0, ix1 = clip(x1 + thickness, x2 - thickness, w)
    inner = out[iy0:iy1, ix0:ix1].copy()
    out[oy0:oy1, ox0:ox1] = color
    out[iy0:iy1, ix0:ix1] = inner


# 3x5 bitmap glyphs for score labels
_GLYPHS = {
    "0": "111101101101111", "1": "010110010010111", "2": "111001111100111", "3": "111001111001111",
    "4": "101101111001001", "5": "111100111001111", "6": "111100111101111", "7": "111001001001001",
    "8": "111101111101111", "9": "111101111001111", ".": "000000000000010",
}


def _draw_text(out, x, y, text, color):
    h, w = out.shape[:2]
    for n, ch in enumerate(text):
        bits = _GLYPHS.get(ch)
        if bits is None:
            continue
        for i, bit in enumerate(bits):
            px, py = x + 4 * n + i % 3, y + i // 3
            if bit == "1" and 0 <= px < w and 0 <= py < h:
                out[py, px] = color


def render(img: np.ndarray, dets: Sequence[Detection], labels: bool = False) -> np.ndarray:
    """Draw 2-px class-coloured rectangles; boxes leaving the image are clipped.

    With ``labels`` the score is written in a 3x5 pixel font just above each box.
    """
    out = np.array(img, dtype=np.uint8, copy=True)
    for d in dets:
        color = CLASS_COLORS[d.class_id % len(CLASS_COLORS)]
        rect = pixel_rect(d)
        _fill_border(out, rect, color)
        if labels:
            _draw_text(out, rect[0], rect[1] - 7, f"{d.score:.2f}", color)
    return out


def format_detections(dets: Sequence[Detection]) -> str:
    return "".join(f"{d.class_id} {d.score:.4f} {d.cx:.4f} {d.cy:.4f} {d.w:.4f} {d.h:.4f}\n" for d in dets)


def parse_detections(text: str) -> list[Detection]:
    dets = []
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 6:
            raise ValueError(f"line {lineno}: expected 'class score cx cy w h', got {line!r}")
        c, s, cx, cy, w, h = fields
        dets.append(Detection(float(cx), float(cy), float(w), float(h), int(c), float(s)))
    return dets
