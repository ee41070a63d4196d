"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import MATURITY_NAMES, __version__
from .augment import OP_SUFFIX, augment_corpus
from .dataset_io import emit_train_config, image_size, read_image, read_labels, write_image
from .detect_post import (
    DEFAULT_CONF,
    DEFAULT_NMS_IOU,
    format_detections,
    image_to_tensor,
    letterbox,
    parse_detections,
    postprocess,
    render,
)
from .errors import StrawdetError
from .graph import ARCH_IDS, build_model, count_flops, count_params, describe
from .metrics import GtBox, ScoredBox, evaluate
from .model import forward
from .weights import init_weights, load_weights, save_weights, zero_weights

log = logging.getLogger("strawdet")


class UsageError(Exception):
    """Bad input discovered after argument parsing; exits with code 2."""


def unit_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{v} is outside [0, 1]")
    return v


def positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"{v} must be >= 1")
    return v


def op_list(text: str) -> list[str]:
    ops = [o.strip() for o in text.split(",") if o.strip()]
    for op in ops:
        if op not in OP_SUFFIX:
            raise argparse.ArgumentTypeError(f"unknown augmentation {op!r}; choose from {', '.join(OP_SUFFIX)}")
    return ops


def class_names(nc: int) -> list[str]:
    return list(MATURITY_NAMES) if nc == len(MATURITY_NAMES) else [f"class{i}" for i in range(nc)]


def _color(text: str, code: str) -> str:
    if os.environ.get("STRAW_NO_COLOR") or not sys.stdout.isatty():
        return text
    return f"\033[{code}m{text}\033[0m"


def _add_model_args(p, weights: bool = False):
    p.add_argument("--arch", choices=ARCH_IDS, default="yolov5s-straw")
    p.add_argument("--classes", type=positive_int, default=3)
    if weights:
        p.add_argument("--weights", required=True, help="SDWT weight file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="strawdet", description="Strawberry maturity detector.")
    parser.add_argument("--version", action="version", version=f"strawdet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    model = sub.add_parser("model", help="inspect or initialise a model").add_subparsers(dest="model_cmd", required=True)
    info = model.add_parser("info", help="layer table, parameters and GFLOPs")
    info.add_argument("arch", choices=ARCH_IDS)
    info.add_argument("--classes", type=positive_int, default=3)
    info.add_argument("--imgsz", type=positive_int, default=640)
    init = model.add_parser("init", help="write a seeded (or zero) weight file")
    _add_model_args(init)
    init.add_argument("--seed", type=int, default=0)
    init.add_argument("--zero", action="store_true", help="all-zero weights")
    init.add_argument("--out", required=True)

    det = sub.add_parser("detect", help="run detection on PPM images")
    _add_model_args(det, weights=True)
    det.add_argument("images", nargs="+", help="PPM files or directories")
    det.add_argument("--conf", type=unit_float, default=DEFAULT_CONF)
    det.add_argument("--nms-iou", type=unit_float, default=DEFAULT_NMS_IOU)
    det.add_argument("--imgsz", type=positive_int, default=640)
    det.add_argument("--out", required=True, help="output directory")
    det.add_argument("--render", action="store_true", help="also write annotated images")
    det.add_argument("--jobs", type=positive_int, default=1)

    ev = sub.add_parser("eval", help="score prediction files against ground-truth labels")
    ev.add_argument("pred_dir")
    ev.add_argument("gt_dir")
    ev.add_argument("--classes", type=positive_int, default=3)
    ev.add_argument("--eval-iou", type=unit_float, default=0.5)
    ev.add_argument("--images", help="directory holding <stem>.ppm for image sizes (default: gt_dir)")
    ev.add_argument("--img-size", type=positive_int, nargs=2, metavar=("W", "H"),
                    help="image size for every prediction file")
    ev.add_argument("--out", help="directory for report.txt and report.csv")

    aug = sub.add_parser("augment", help="write an augmented copy of an image/label corpus")
    aug.add_argument("in_dir")
    aug.add_argument("out_dir")
    aug.add_argument("--ops", type=op_list, default=[], help=f"comma list from {','.join(OP_SUFFIX)}")
    aug.add_argument("--seed", type=int, default=0)
    aug.add_argument("--jobs", type=positive_int, default=1)
    aug.add_argument("--mosaic-size", type=positive_int, default=640)

    bench = sub.add_parser("bench", help="time forward+decode+NMS")
    _add_model_args(bench)
    bench.add_argument("--weights", help="SDWT weight file (default: seeded init)")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--iters", type=positive_int, default=10)
    bench.add_argument("--imgsz", type=positive_int, default=640)
    bench.add_argument("--image", help="PPM image (default: synthetic gradient)")
    bench.add_argument("--conf", type=unit_float, default=DEFAULT_CONF)
    bench.add_argument("--nms-iou", type=unit_float, default=DEFAULT_NMS_IOU)

    cfg = sub.add_parser("emit-train-config", help="write the training hyperparameter file")
    cfg.add_argument("--out", required=True)
    return parser


def cmd_model_info(args) -> int:
    if args.imgsz % 32:
        raise UsageError(f"--imgsz {args.imgsz} is not divisible by 32")
    print(describe(build_model(args.arch, args.classes), args.imgsz))
    return 0


def cmd_model_init(args) -> int:
    graph = build_model(args.arch, args.classes)
    store = zero_weights(graph) if args.zero else init_weights(graph, args.seed)
    save_weights(store, args.out)
    print(f"wrote {args.out}: {graph.arch_id}, {count_params(graph):,} parameters")
    return 0


def _collect_images(paths) -> list[Path]:
    found = []
    for p in map(Path, paths):
        if p.is_dir():
            found += [q for q in p.iterdir() if q.suffix.lower() == ".ppm"]
        elif p.exists():
            found.append(p)
        else:
            raise UsageError(f"no such image: {p}")
    return sorted(set(found), key=lambda q: q.as_posix())


def detect_image(graph, store, img, imgsz, conf, nms_iou):
    boxed, tf = letterbox(img, imgsz)
    heads = forward(graph, store, image_to_tensor(boxed))
    return postprocess(heads, tf, graph.anchors, graph.nc, conf, nms_iou)


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def cmd_detect(args) -> int:
    if args.imgsz % 32:
        raise UsageError(f"--imgsz {args.imgsz} is not divisible by 32")
    graph = build_model(args.arch, args.classes)
    store = load_weights(args.weights, graph)
    images = _collect_images(args.images)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def one(path: Path) -> int:
        img = read_image(path)
        dets = detect_image(graph, store, img, args.imgsz, args.conf, args.nms_iou)
        _write_atomic(out / f"{path.stem}.txt", format_detections(dets))
        if args.render:
            write_image(out / f"{path.stem}_det.ppm", render(img, dets))
        return len(dets)

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        counts = list(pool.map(one, images))
    for path, n in zip(images, counts):
        print(f"{path.name}: {n} detections")
    return 0


def _pred_scale(stem: str, args):
    if args.img_size:
        return tuple(args.img_size)
    for directory in (args.images, args.gt_dir):
        if directory and (Path(directory) / f"{stem}.ppm").exists():
            return image_size(Path(directory) / f"{stem}.ppm")
    return (1, 1)


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise UsageError(f"not a directory: {d}")
    gt_stems = {p.stem for p in gt_dir.glob("*.txt")}
    pred_stems = {p.stem for p in pred_dir.glob("*.txt")}
    for stem in sorted(gt_stems ^ pred_stems):
        side = "prediction" if stem in gt_stems else "ground truth"
        log.warning("%s: no %s file; excluded", stem, side)
    common = sorted(gt_stems & pred_stems)
    if not common:
        raise UsageError("no file stems shared between prediction and ground-truth directories")

    pairs = []
    for stem in common:
        w, h = _pred_scale(stem, args)
        dets = [ScoredBox(d.class_id, d.score, d.cx / w, d.cy / h, d.w / w, d.h / h)
                for d in parse_detections((pred_dir / f"{stem}.txt").read_text())]
        gts = [GtBox(r.class_id, r.cx, r.cy, r.w, r.h) for r in read_labels(gt_dir / f"{stem}.txt")]
        pairs.append((dets, gts))
    report = evaluate(pairs, class_names(args.classes), args.eval_iou)
    text = report.to_text()
    head, *rest = text.splitlines()
    print("\n".join([_color(head, "1"), *rest[:-1], _color(rest[-1], "1;32")]))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_atomic(out / "report.txt", text + "\n")
        _write_atomic(out / "report.csv", report.to_csv())
    return 0


def cmd_augment(args) -> int:
    written = augment_corpus(args.in_dir, args.out_dir, args.ops, args.seed, args.jobs, args.mosaic_size)
    print(f"wrote {len(written)} images to {args.out_dir}")
    return 0


def _synthetic_image(size: int) -> np.ndarray:
    ramp = np.linspace(0, 255, size, dtype=np.float64)
    img = np.stack([ramp[None, :].repeat(size, 0), ramp[:, None].repeat(size, 1),
                    np.full((size, size), 128.0)], axis=-1)
    return img.astype(np.uint8)


def cmd_bench(args) -> int:
    if args.imgsz % 32:
        raise UsageError(f"--imgsz {args.imgsz} is not divisible by 32")
    graph = build_model(args.arch, args.classes)
    store = load_weights(args.weights, graph) if args.weights else init_weights(graph, args.seed)
    img = read_image(args.image) if args.image else _synthetic_image(args.imgsz)
    times, digest = [], None
    for _ in range(args.iters):
        t0 = time.perf_counter()
        dets = detect_image(graph, store, img, args.imgsz, args.conf, args.nms_iou)
        times.append((time.perf_counter() - t0) * 1000.0)
        digest = hashlib.sha256(format_detections(dets).encode()).hexdigest()[:16]
    ordered = sorted(times)
    p95 = ordered[min(len(ordered) - 1, int(np.ceil(0.95 * len(ordered))) - 1)]
    print(f"arch: {graph.arch_id}  input: {args.imgsz}x{args.imgsz}  iters: {args.iters}")
    print(f"GFLOPs: {count_flops(graph, args.imgsz):.1f}")
    print(f"mean_ms: {statistics.fmean(times):.2f}")
    print(f"median_ms: {statistics.median(times):.2f}")
    print(f"p95_ms: {p95:.2f}")
    print(f"detections: {len(dets)}  digest: {digest}")
    return 0


def cmd_emit_train_config(args) -> int:
    emit_train_config(args.out)
    print(f"wrote {args.out}")
    return 0


COMMANDS = {
    "detect": cmd_detect,
    "eval": cmd_eval,
    "augment": cmd_augment,
    "bench": cmd_bench,
    "emit-train-config": cmd_emit_train_config,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.command == "model":
        handler = cmd_model_info if args.model_cmd == "info" else cmd_model_init
    else:
        handler = COMMANDS[args.command]
    try:
        return handler(args)
    except UsageError as e:
        print(f"strawdet: error: {e}", file=sys.stderr)
        return 2
    except (StrawdetError, OSError, ValueError) as e:
        print(f"strawdet: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
