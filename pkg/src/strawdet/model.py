"""Inference forward pass over a ModelGraph and its WeightStore."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .graph import BlockSpec, ConvSlot, ModelGraph
from .tensor_ops import (
    BnParams,
    ConvParams,
    add,
    as_tensor,
    concat_channels,
    conv2d,
    fold_batchnorm,
    maxpool2d,
    silu,
    upsample_nearest2x,
)
from .weights import WeightStore

BN_EPS = 1e-3
POOL_K = 5


def fused_conv(store: WeightStore, slot: ConvSlot) -> ConvParams:
    """Conv + batchnorm of one slot folded into a single ConvParams."""
    if not slot.bn:
        return ConvParams(store[f"{slot.name}.weight"], store[f"{slot.name}.bias"], slot.stride, slot.pad)
    conv = ConvParams(store[f"{slot.name}.conv.weight"], np.zeros(slot.c_out, np.float32), slot.stride, slot.pad)
    bn = BnParams(
        store[f"{slot.name}.bn.weight"],
        store[f"{slot.name}.bn.bias"],
        store[f"{slot.name}.bn.running_mean"],
        store[f"{slot.name}.bn.running_var"],
        BN_EPS,
    )
    return fold_batchnorm(conv, bn)


class _Block:
    """Per-block view resolving sub-convolutions by their short name (``cv1``, ``m.0.cv2``...)."""

    def __init__(self, graph: ModelGraph, store: WeightStore, block: BlockSpec):
        self.block = block
        self.store = store
        self.slots = {s.name[len(block.prefix) + 1 :] or "": s for s in graph.block_slots(block)}

    def conv(self, name: str, x: np.ndarray) -> np.ndarray:
        return silu(conv2d(x, fused_conv(self.store, self.slots[name])))


def _c3(b: _Block, x):
    y = b.conv("cv1", x)
    for i in range(b.block.n):
        h = b.conv(f"m.{i}.cv2", b.conv(f"m.{i}.cv1", y))
        y = add(y, h) if b.block.shortcut else h
    return b.conv("cv3", concat_channels([y, b.conv("cv2", x)]))


def _c2f(b: _Block, x):
    y = b.conv("cv1", x)
    half = y.shape[1] // 2
    ys = [y[:, :half], y[:, half:]]
    for i in range(b.block.n):
        h = b.conv(f"m.{i}.cv2", b.conv(f"m.{i}.cv1", ys[-1]))
        ys.append(add(ys[-1], h) if b.block.shortcut else h)
    return b.conv("cv2", concat_channels(ys))


def _pools(x, taps, key):
    p1 = maxpool2d(x, POOL_K, 1, POOL_K // 2)
    p2 = maxpool2d(p1, POOL_K, 1, POOL_K // 2)
    p3 = maxpool2d(p2, POOL_K, 1, POOL_K // 2)
    if taps is not None:
        taps[key] = (x, p1, p2, p3)
    return [x, p1, p2, p3]


def _sppf(b: _Block, x, taps=None):
    y = b.conv("cv1", x)
    return b.conv("cv2", concat_channels(_pools(y, taps, b.block.index)))


def _sppfcsp(b: _Block, x, taps=None):
    y = b.conv("cv4", b.conv("cv3", b.conv("cv1", x)))
    pooled = b.conv("cv6", b.conv("cv5", concat_channels(_pools(y, taps, b.block.index))))
    plain = b.conv("cv2", x)
    return b.conv("cv7", concat_channels([pooled, plain]))


def run_block(graph: ModelGraph, store: WeightStore, index: int, x, taps: dict | None = None) -> np.ndarray:
    """Execute one single-input block (ConvBlock, C3, C2f, SPPF, SPPFCSP, Upsample) on ``x``."""
    block = graph.layers[index]
    b = _Block(graph, store, block)
    x = as_tensor(x)
    kind = block.kind
    if kind == "ConvBlock":
        return b.conv("", x)
    if kind == "C3":
        return _c3(b, x)
    if kind == "C2f":
        return _c2f(b, x)
    if kind == "SPPF":
        return _sppf(b, x, taps)
    if kind == "SPPFCSP":
        return _sppfcsp(b, x, taps)
    if kind == "Upsample":
        return upsample_nearest2x(x)
    raise ValueError(f"layer {index} ({kind}) is not a single-input block")


def forward(graph: ModelGraph, store: WeightStore, x, taps: dict | None = None) -> list[np.ndarray]:
    """Raw head outputs at strides 8, 16 and 32, each (n, 3*(nc+5), H/s, W/s).

    If ``taps`` is a dict, pyramid blocks record ``(input, pool1, pool2, pool3)``
    under their layer index.
    """
    x = as_tensor(x)
    if x.shape[1] != 3:
        raise ShapeError(f"input must have 3 channels, got {x.shape[1]}", dim="channels")
    for dim, size in (("height", x.shape[2]), ("width", x.shape[3])):
        if size % 32:
            raise ShapeError(f"input {dim} {size} is not divisible by 32", dim=dim)
    store.validate(graph)

    outputs: list[np.ndarray] = []
    for block in graph.layers:
        if block.kind == "Concat":
            y = concat_channels([outputs[i] for i in block.inputs])
        elif block.kind == "DetectHead":
            return [
                conv2d(outputs[i], fused_conv(store, slot))
                for i, slot in zip(block.inputs, graph.block_slots(block))
            ]
        else:
            y = run_block(graph, store, block.index, x if block.index == 0 else outputs[block.inputs[0]], taps)
        outputs.append(y)
    raise ValueError("graph has no DetectHead")
