"""Seed-deterministic image augmentations: brightness, noise, HSV jitter and mosaic.

Every function takes a uint8 (h, w, 3) RGB image and returns a new one; none
modifies its input.  Randomness always comes from an explicit SplitMix64.
"""

from __future__ import annotations

import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset_io import LabelRecord, discover, read_image, read_labels, write_image, write_labels
from .detect_post import PAD_VALUE, resize_bilinear
from .rng import SplitMix64

HSV_GAINS = (0.015, 0.7, 0.4)
NOISE_VARIANCE = 0.02
SALT_PEPPER_DENSITY = 0.02
MOSAIC_MIN_AREA = 0.2


@dataclass
class LabeledImage:
    image: np.ndarray
    labels: list[LabelRecord] = field(default_factory=list)


def adjust_brightness(img: np.ndarray, delta: int) -> np.ndarray:
    return np.clip(np.asarray(img, np.int16) + int(delta), 0, 255).astype(np.uint8)


def gaussian_noise(img: np.ndarray, variance: float, rng: SplitMix64) -> np.ndarray:
    """Add N(0, variance) noise on the [0, 1] intensity scale, then clip and requantise."""
    if variance <= 0:
        raise ValueError("variance must be positive")
    img = np.asarray(img)
    noisy = img / 255.0 + np.sqrt(variance) * rng.normal(img.size).reshape(img.shape)
    return np.rint(np.clip(noisy, 0.0, 1.0) * 255.0).astype(np.uint8)


def salt_pepper(img: np.ndarray, density: float, rng: SplitMix64) -> np.ndarray:
    """Replace each pixel with probability ``density``: black if u < density/2, else white."""
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must be in [0, 1]")
    out = np.array(img, dtype=np.uint8, copy=True)
    u = rng.uniform(out.shape[0] * out.shape[1]).reshape(out.shape[:2])
    out[u < density / 2] = 0
    out[(u >= density / 2) & (u < density)] = 255
    return out


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Hexcone RGB -> HSV, all channels in [0, 1]."""
    rgb = np.asarray(rgb, np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    delta = maxc - minc
    s = np.divide(delta, maxc, out=np.zeros_like(maxc), where=maxc > 0)
    safe = np.where(delta > 0, delta, 1.0)
    rc, gc, bc = (maxc - r) / safe, (maxc - g) / safe, (maxc - b) / safe
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, maxc], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    hsv = np.asarray(hsv, np.float64)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    i = i.astype(np.int64) % 6
    choices_r = [v, q, p, p, t, v]
    choices_g = [t, v, v, q, p, p]
    choices_b = [p, p, t, v, v, q]
    rgb = np.stack([np.choose(i, choices_r), np.choose(i, choices_g), np.choose(i, choices_b)], axis=-1)
    return np.where((s == 0)[..., None], v[..., None], rgb)


def hsv_jitter(img: np.ndarray, gains=HSV_GAINS, rng: SplitMix64 | None = None) -> np.ndarray:
    """Scale H, S, V by (1 + u*gain), u ~ U[-1, 1] per channel; hue wraps, S and V clamp."""
    if min(gains) < 0:
        raise ValueError("gains must be non-negative")
    rng = rng or SplitMix64(0)
    factors = 1.0 + (2.0 * rng.uniform(3) - 1.0) * np.asarray(gains, np.float64)
    hsv = rgb_to_hsv(np.asarray(img) / 255.0)
    hsv[..., 0] = (hsv[..., 0] * factors[0]) % 1.0
    hsv[..., 1] = np.clip(hsv[..., 1] * factors[1], 0.0, 1.0)
    hsv[..., 2] = np.clip(hsv[..., 2] * factors[2], 0.0, 1.0)
    return np.clip(np.rint(hsv_to_rgb(hsv) * 255.0), 0, 255).astype(np.uint8)


def mosaic(images: Sequence[LabeledImage], out_size: int, rng: SplitMix64,
           min_area: float = MOSAIC_MIN_AREA) -> LabeledImage:
    """Stitch four images around a random centre of a 2*out_size canvas and crop its middle.

    Each image is resized so its long side equals ``out_size``.  Labels are moved
    with their image, clipped to the crop, and dropped if less than ``min_area``
    of their (resized) area survives.
    """
    if len(images) < 4:
        raise ValueError(f"mosaic needs 4 images, got {len(images)}")
    s = out_size
    canvas = np.full((2 * s, 2 * s, 3), PAD_VALUE, np.uint8)
    xc = s // 2 + rng.randint(0, s)
    yc = s // 2 + rng.randint(0, s)
    boxes = []
    for i, item in enumerate(images[:4]):
        h0, w0 = item.image.shape[:2]
        r = s / max(h0, w0)
        w, h = max(1, int(round(w0 * r))), max(1, int(round(h0 * r)))
        im = resize_bilinear(item.image, w, h)
        if i == 0:  # top left
            x1a, y1a, x2a, y2a = max(xc - w, 0), max(yc - h, 0), xc, yc
            x1b, y1b = w - (x2a - x1a), h - (y2a - y1a)
        elif i == 1:  # top right
            x1a, y1a, x2a, y2a = xc, max(yc - h, 0), min(xc + w, 2 * s), yc
            x1b, y1b = 0, h - (y2a - y1a)
        elif i == 2:  # bottom left
            x1a, y1a, x2a, y2a = max(xc - w, 0), yc, xc, min(2 * s, yc + h)
            x1b, y1b = w - (x2a - x1a), 0
        else:  # bottom right
            x1a, y1a, x2a, y2a = xc, yc, min(xc + w, 2 * s), min(2 * s, yc + h)
            x1b, y1b = 0, 0
        canvas[y1a:y2a, x1a:x2a] = im[y1b : y1b + (y2a - y1a), x1b : x1b + (x2a - x1a)]
        dx, dy = x1a - x1b, y1a - y1b
        for lab in item.labels:
            bw, bh = lab.w * w, lab.h * h
            x1, y1 = lab.cx * w - bw / 2 + dx, lab.cy * h - bh / 2 + dy
            boxes.append((lab.class_id, x1, y1, x1 + bw, y1 + bh))

    off = s // 2
    out_labels = []
    for cls, x1, y1, x2, y2 in boxes:
        area = (x2 - x1) * (y2 - y1)
        cx1, cy1 = min(max(x1 - off, 0.0), s), min(max(y1 - off, 0.0), s)
        cx2, cy2 = min(max(x2 - off, 0.0), s), min(max(y2 - off, 0.0), s)
        kept = (cx2 - cx1) * (cy2 - cy1)
        if cx2 <= cx1 or cy2 <= cy1 or kept < min_area * area:
            continue
        out_labels.append(LabelRecord(cls, (cx1 + cx2) / 2 / s, (cy1 + cy2) / 2 / s, (cx2 - cx1) / s, (cy2 - cy1) / s))
    return LabeledImage(canvas[off : off + s, off : off + s].copy(), out_labels)


# --- corpus-level batch mode ------------------------------------------------------

OP_SUFFIX = {
    "b+20": "_b+20",
    "b+40": "_b+40",
    "b-20": "_b-20",
    "b-40": "_b-40",
    "saltpepper": "_sp",
    "gauss": "_gauss",
    "hsv": "_hsv",
    "mosaic": "_mosaic",
}
PHOTOMETRIC_OPS = ("saltpepper", "gauss", "b+20", "b+40", "b-20", "b-40")


def apply_op(op: str, img: np.ndarray, rng: SplitMix64) -> np.ndarray:
    if op.startswith("b") and op[1:2] in "+-":
        return adjust_brightness(img, int(op[1:]))
    if op == "saltpepper":
        return salt_pepper(img, SALT_PEPPER_DENSITY, rng)
    if op == "gauss":
        return gaussian_noise(img, NOISE_VARIANCE, rng)
    if op == "hsv":
        return hsv_jitter(img, HSV_GAINS, rng)
    raise ValueError(f"unknown augmentation {op!r}")


def augment_corpus(in_dir, out_dir, ops: Sequence[str], seed: int = 0, jobs: int = 1,
                   mosaic_size: int = 640) -> list[Path]:
    """Copy every image/label pair and write one augmented copy per op.

    Per-image ops give N*(k+1) images; ``mosaic`` adds floor(N/4) composites of
    consecutive groups of four.  Returns written image paths in sorted order.
    """
    unknown = [op for op in ops if op not in OP_SUFFIX]
    if unknown:
        raise ValueError(f"unknown augmentation {unknown[0]!r}; choose from {', '.join(OP_SUFFIX)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = discover(in_dir).entries
    per_image = [op for op in ops if op != "mosaic"]
    base = SplitMix64(seed)

    def one(idx_entry):
        idx, entry = idx_entry
        src, stem = Path(entry.image), Path(entry.image).stem
        written = [out_dir / src.name]
        shutil.copyfile(src, written[0])
        labels = read_labels(entry.label)
        write_labels(out_dir / f"{stem}.txt", labels)
        if per_image:
            img = read_image(src)
            for j, op in enumerate(per_image):
                dst = out_dir / f"{stem}{OP_SUFFIX[op]}.ppm"
                write_image(dst, apply_op(op, img, base.spawn(idx, list(OP_SUFFIX).index(op))))
                write_labels(dst.with_suffix(".txt"), labels)
                written.append(dst)
        return written

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(one, enumerate(entries)))
    written = [p for group in results for p in group]

    if "mosaic" in ops:
        for g in range(len(entries) // 4):
            group = entries[4 * g : 4 * g + 4]
            items = [LabeledImage(read_image(e.image), read_labels(e.label)) for e in group]
            out = mosaic(items, mosaic_size, base.spawn(10**9 + g))
            dst = out_dir / f"{Path(group[0].image).stem}{OP_SUFFIX['mosaic']}.ppm"
            write_image(dst, out.image)
            write_labels(dst.with_suffix(".txt"), out.labels)
            written.append(dst)
    return sorted(written)
