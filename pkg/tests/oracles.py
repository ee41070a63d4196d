"""Brute-force reference implementations. Deliberately slow and independent of src/."""

import itertools
import math

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64_ref(seed, n):
    state, out = seed & MASK64, []
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        out.append(z ^ (z >> 31))
    return out


def conv2d_direct(x, weight, bias, stride=1, padding=0):
    """Quadruple-loop convolution with float64 accumulation."""
    x = np.asarray(x, np.float64)
    weight = np.asarray(weight, np.float64)
    n, c, h, w = x.shape
    co, ci, k, _ = weight.shape
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    out = np.zeros((n, co, oh, ow))
    for b in range(n):
        for o in range(co):
            for i in range(oh):
                for j in range(ow):
                    acc = float(bias[o])
                    for ch in range(c):
                        for ky in range(k):
                            for kx in range(k):
                                yy = i * stride + ky - padding
                                xx = j * stride + kx - padding
                                if 0 <= yy < h and 0 <= xx < w:
                                    acc += x[b, ch, yy, xx] * weight[o, ch, ky, kx]
                    out[b, o, i, j] = acc
    return out


def conv2d_windowed(x, weight, bias, stride=1, padding=0):
    """Direct definition with the innermost (c, k, k) sum vectorised; for larger cases."""
    x = np.asarray(x, np.float64)
    weight = np.asarray(weight, np.float64)
    n, c, h, w = x.shape
    co, _, k, _ = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    out = np.zeros((n, co, oh, ow))
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                patch = xp[b, :, i * stride : i * stride + k, j * stride : j * stride + k]
                out[b, :, i, j] = np.tensordot(weight, patch, axes=([1, 2, 3], [0, 1, 2])) + bias
    return out


def maxpool_direct(x, k, stride, padding):
    n, c, h, w = x.shape
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    out = np.empty((n, c, oh, ow), x.dtype)
    for i in range(oh):
        for j in range(ow):
            y0, x0 = i * stride - padding, j * stride - padding
            win = x[:, :, max(y0, 0) : y0 + k, max(x0, 0) : x0 + k]
            out[:, :, i, j] = win.max(axis=(2, 3))
    return out


def batchnorm_ref(y, gamma, beta, mean, var, eps):
    shape = (1, -1, 1, 1)
    g, b, m, v = (np.asarray(a, np.float64).reshape(shape) for a in (gamma, beta, mean, var))
    return g * (np.asarray(y, np.float64) - m) / np.sqrt(v + eps) + b


def rel_err(a, ref):
    """Max abs difference relative to the reference's max magnitude."""
    a = np.asarray(a, np.float64)
    ref = np.asarray(ref, np.float64)
    scale = max(float(np.abs(ref).max()), 1e-12)
    return float(np.abs(a - ref).max()) / scale


def box_iou_ref(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def max_matching(iou_table, thresh):
    """Largest one-to-one det<->gt matching with IoU > thresh, by exhaustive search."""
    n_det = len(iou_table)
    n_gt = len(iou_table[0]) if n_det else 0
    best = 0
    for perm in itertools.permutations(list(range(n_gt)) + [None] * n_det, n_det):
        count = sum(1 for d, g in enumerate(perm) if g is not None and iou_table[d][g] > thresh)
        best = max(best, count)
    return best


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def logit(p):
    return math.log(p / (1.0 - p))


def ideal_heads(boxes, input_hw, nc, anchors, strides=(8, 16, 32), background=-20.0, strong=20.0):
    """Head tensors whose decoding is exactly ``boxes`` [(cx, cy, w, h, cls), ...] in network pixels.

    Each box is placed at the stride whose anchors fit it best, inverting the
    documented decode formulas; every other cell has a strongly negative objectness.
    """
    h, w = input_hw
    no = nc + 5
    heads = [np.full((1, len(a) * no, h // s, w // s), background, np.float32) for a, s in zip(anchors, strides)]
    for cx, cy, bw, bh, cls in boxes:
        best = None
        for li, (scale_anchors, s) in enumerate(zip(anchors, strides)):
            for ai, (aw, ah) in enumerate(scale_anchors):
                ratio = max(bw / aw, aw / bw, bh / ah, ah / bh)
                if bw < 3.5 * aw and bh < 3.5 * ah and (best is None or ratio < best[0]):
                    best = (ratio, li, ai)
        if best is None:
            raise ValueError(f"box {bw}x{bh} does not fit any anchor")
        _, li, ai = best
        s = strides[li]
        aw, ah = anchors[li][ai]
        gx, gy = int(cx // s), int(cy // s)
        vals = [logit((cx / s - gx + 0.5) / 2), logit((cy / s - gy + 0.5) / 2),
                logit(math.sqrt(bw / aw) / 2), logit(math.sqrt(bh / ah) / 2), strong]
        vals += [strong if c == cls else background for c in range(nc)]
        heads[li][0, ai * no : (ai + 1) * no, gy, gx] = vals
    return heads
