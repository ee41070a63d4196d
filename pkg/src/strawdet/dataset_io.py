"""Labels, manifests, train/test split, binary PPM raster I/O and the train config file."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import MATURITY_NAMES
from .errors import ImageMagicError, ImageTruncatedError, LabelFormatError, UnsupportedMaxvalError
from .rng import SplitMix64

log = logging.getLogger(__name__)

MATURITY_IDS = {name: i for i, name in enumerate(MATURITY_NAMES)}
IMAGE_SUFFIXES = (".ppm",)


class LabelRecord(NamedTuple):
    class_id: int
    cx: float
    cy: float
    w: float
    h: float


def parse_label_file(text: str, nc: int = len(MATURITY_NAMES)) -> list[LabelRecord]:
    """Parse ``class cx cy w h`` lines (normalised coordinates); blank lines are skipped."""
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 5:
            raise LabelFormatError(f"expected 5 fields, got {len(fields)} at line {lineno}", line=lineno)
        try:
            cls = int(fields[0])
            coords = [float(v) for v in fields[1:]]
        except ValueError:
            raise LabelFormatError(f"non-numeric field at line {lineno}", line=lineno) from None
        if not 0 <= cls < nc:
            raise LabelFormatError(f"unknown class {cls} at line {lineno}", line=lineno)
        if not all(0.0 <= v <= 1.0 for v in coords):
            raise LabelFormatError(f"coordinate outside [0, 1] at line {lineno}", line=lineno)
        if coords[2] <= 0 or coords[3] <= 0:
            raise LabelFormatError(f"non-positive box size at line {lineno}", line=lineno)
        records.append(LabelRecord(cls, *coords))
    return records


def format_labels(records: Sequence[LabelRecord]) -> str:
    return "".join(f"{r.class_id} {r.cx:.6f} {r.cy:.6f} {r.w:.6f} {r.h:.6f}\n" for r in records)


def read_labels(path) -> list[LabelRecord]:
    path = Path(path)
    return parse_label_file(path.read_text(encoding="utf-8")) if path.exists() else []


def write_labels(path, records: Sequence[LabelRecord]) -> None:
    Path(path).write_text(format_labels(records), encoding="utf-8")


# --- raster I/O -------------------------------------------------------------

def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    tokens, pos, n = [], 0, len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise ImageTruncatedError("unexpected end of data in header")
        start = pos
        while pos < n and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= n:
        raise ImageTruncatedError("unexpected end of data after header")
    return tokens, pos + 1


def decode_ppm(data: bytes) -> np.ndarray:
    if data[:2] != b"P6":
        raise ImageMagicError(f"bad magic {data[:2]!r}, expected b'P6'")
    tokens, offset = _header_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageMagicError("malformed P6 header") from None
    if maxval != 255:
        raise UnsupportedMaxvalError(f"maxval {maxval} not supported (only 255)")
    need = width * height * 3
    payload = data[offset : offset + need]
    if len(payload) < need:
        raise ImageTruncatedError(f"unexpected end of data: {len(payload)} of {need} pixel bytes")
    return np.frombuffer(payload, np.uint8).reshape(height, width, 3).copy()


def encode_ppm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected uint8 (h, w, 3) image, got {img.dtype} {img.shape}")
    h, w = img.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


def read_image(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def image_size(path) -> tuple[int, int]:
    """(width, height) from the PPM header only."""
    with open(path, "rb") as f:
        head = f.read(512)
    if head[:2] != b"P6":
        raise ImageMagicError(f"bad magic {head[:2]!r}, expected b'P6'")
    tokens, _ = _header_tokens(head, 4)
    return int(tokens[1]), int(tokens[2])


def write_image(path, img: np.ndarray) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_ppm(img))
    os.replace(tmp, path)


# --- manifests and splitting ---------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    image: str
    label: str
    split: str = ""


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]

    def subset(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def to_text(self) -> str:
        return "".join(f"{e.image}\t{e.label}\t{e.split}\n" for e in self.entries)

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        entries = []
        for line in text.splitlines():
            if line.strip():
                image, label, *rest = line.split("\t")
                entries.append(ManifestEntry(image, label, rest[0] if rest else ""))
        return cls(tuple(entries))


def discover(directory) -> DatasetManifest:
    """Pair every image in ``directory`` with ``<stem>.txt``, in lexicographic path order."""
    directory = Path(directory)
    images = sorted((p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES), key=lambda p: p.as_posix())
    return DatasetManifest(tuple(ManifestEntry(p.as_posix(), p.with_suffix(".txt").as_posix()) for p in images))


def split_dataset(manifest: DatasetManifest, ratio=(0.9, 0.1), seed: int = 0) -> DatasetManifest:
    """Seeded shuffle, then the first part becomes ``train``.

    The test share is floored and the remainder goes to train, so 3 entries at
    90:10 give 3 train / 0 test.
    """
    n = len(manifest.entries)
    if n == 0:
        raise ValueError("cannot split an empty manifest")
    if n < 2:
        log.warning("splitting a manifest with %d entry", n)
    test_frac = ratio[1] / (ratio[0] + ratio[1])
    n_test = int(math.floor(n * test_frac + 1e-9))
    if n_test == 0:
        log.warning("test split is empty for %d entries", n)
    shuffled = SplitMix64(seed).shuffle(list(manifest.entries))
    n_train = n - n_test
    return DatasetManifest(tuple(
        ManifestEntry(e.image, e.label, "train" if i < n_train else "test") for i, e in enumerate(shuffled)
    ))


# --- training hyperparameters --------------------------------------------------

TRAIN_CONFIG = {
    "epochs": 100,
    "optimizer": "SGD",
    "batch": 16,
    "lr": 0.01,
    "momentum": 0.937,
    "weight_decay": 0.0005,
    "patience": 20,
    "iou_t": 0.01,
    "hsv": (0.015, 0.7, 0.4),
}


def _fmt(value) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def _scalar(value: str):
    for conv in (int, float):
        try:
            return conv(value)
        except ValueError:
            pass
    return value


def format_train_config(config: dict = TRAIN_CONFIG) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in config.items())


def parse_train_config(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        value = value.strip()
        out[key.strip()] = tuple(_scalar(v.strip()) for v in value.split(",")) if "," in value else _scalar(value)
    return out


def emit_train_config(path, config: dict = TRAIN_CONFIG) -> None:
    Path(path).write_text(format_train_config(config), encoding="utf-8")
