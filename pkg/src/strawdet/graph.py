"""Declarative layer graphs for YOLOv5s, YOLOv5s-C2f and YOLOv5s-Straw.

Every graph uses the same 25-slot layout (small-variant channel widths already
applied):

    0  Conv 3->32 k6 s2      10 Conv 512->256 k1     20 C3 256->256
    1  Conv 32->64 k3 s2     11 Upsample              21 Conv 256->256 k3 s2
    2  feat 64 (n=1)         12 Concat [11, 6]        22 Concat [21, 10]
    3  Conv 64->128 k3 s2    13 C3 512->256           23 C3 512->512
    4  feat 128 (n=2)        14 Conv 256->128 k1      24 Detect [17, 20, 23]
    5  Conv 128->256 k3 s2   15 Upsample
    6  feat 256 (n=3)        16 Concat [15, 4]
    7  Conv 256->512 k3 s2   17 C3 256->128
    8  feat 512 (n=1)        18 Conv 128->128 k3 s2
    9  pyramid 512->512      19 Concat [18, 14]

``feat`` is C3 for yolov5s and C2f otherwise; ``pyramid`` is SPPF except for
yolov5s-straw, which uses SPPFCSP.  Neck C3 blocks have no shortcut.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

from .errors import GraphError

ARCH_IDS = ("yolov5s", "yolov5s-c2f", "yolov5s-straw")
BLOCK_KINDS = ("ConvBlock", "Bottleneck", "C3", "C2f", "SPPF", "SPPFCSP", "Upsample", "Concat", "DetectHead")

STRIDES = (8, 16, 32)
DEFAULT_ANCHORS = (
    ((10, 13), (16, 30), (33, 23)),
    ((30, 61), (62, 45), (59, 119)),
    ((116, 90), (156, 198), (373, 326)),
)


class ConvSlot(NamedTuple):
    """One convolution inside a block. ``bn`` False means plain conv with bias."""

    name: str
    c_in: int
    c_out: int
    k: int
    stride: int = 1
    padding: int = -1  # -1 -> k // 2
    bn: bool = True

    @property
    def pad(self) -> int:
        return self.k // 2 if self.padding < 0 else self.padding

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        """Trainable arrays of this slot, in fill order."""
        shapes = {f"{self.name}.conv.weight" if self.bn else f"{self.name}.weight": (self.c_out, self.c_in, self.k, self.k)}
        if self.bn:
            shapes[f"{self.name}.bn.weight"] = (self.c_out,)
            shapes[f"{self.name}.bn.bias"] = (self.c_out,)
        else:
            shapes[f"{self.name}.bias"] = (self.c_out,)
        return shapes

    def buffer_shapes(self) -> dict[str, tuple[int, ...]]:
        if not self.bn:
            return {}
        return {f"{self.name}.bn.running_mean": (self.c_out,), f"{self.name}.bn.running_var": (self.c_out,)}

    def num_params(self) -> int:
        n = self.c_out * self.c_in * self.k * self.k
        return n + (2 * self.c_out if self.bn else self.c_out)

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        return ((h + 2 * self.pad - self.k) // self.stride + 1, (w + 2 * self.pad - self.k) // self.stride + 1)

    def macs(self, h: int, w: int) -> int:
        oh, ow = self.out_hw(h, w)
        return self.c_in * self.k * self.k * self.c_out * oh * ow


@dataclass(frozen=True)
class BlockSpec:
    index: int
    kind: str
    inputs: tuple[int, ...]
    c_in: int
    c_out: int
    k: int = 1
    stride: int = 1
    n: int = 1
    shortcut: bool = True

    @property
    def prefix(self) -> str:
        return f"model.{self.index}"

    def conv_slots(self, detect_in: tuple[int, ...] = (), no: int = 0) -> list[ConvSlot]:
        """All convolutions of the block in weight-fill order."""
        p = self.prefix
        kind = self.kind
        if kind == "ConvBlock":
            pad = 2 if self.k == 6 else -1
            return [ConvSlot(p, self.c_in, self.c_out, self.k, self.stride, pad)]
        if kind == "Bottleneck":
            return _bottleneck_slots(p, self.c_out, 1)
        if kind == "C3":
            c_ = self.c_out // 2
            slots = [ConvSlot(f"{p}.cv1", self.c_in, c_, 1), ConvSlot(f"{p}.cv2", self.c_in, c_, 1),
                     ConvSlot(f"{p}.cv3", 2 * c_, self.c_out, 1)]
            for i in range(self.n):
                slots += _bottleneck_slots(f"{p}.m.{i}", c_, 1)
            return slots
        if kind == "C2f":
            c_ = self.c_out // 2
            slots = [ConvSlot(f"{p}.cv1", self.c_in, 2 * c_, 1), ConvSlot(f"{p}.cv2", (2 + self.n) * c_, self.c_out, 1)]
            for i in range(self.n):
                slots += _bottleneck_slots(f"{p}.m.{i}", c_, 3)
            return slots
        if kind == "SPPF":
            c_ = self.c_in // 2
            return [ConvSlot(f"{p}.cv1", self.c_in, c_, 1), ConvSlot(f"{p}.cv2", 4 * c_, self.c_out, 1)]
        if kind == "SPPFCSP":
            c_ = self.c_out // 2
            return [
                ConvSlot(f"{p}.cv1", self.c_in, c_, 1),
                ConvSlot(f"{p}.cv2", self.c_in, c_, 1),
                ConvSlot(f"{p}.cv3", c_, c_, 3),
                ConvSlot(f"{p}.cv4", c_, c_, 1),
                ConvSlot(f"{p}.cv5", 4 * c_, c_, 1),
                ConvSlot(f"{p}.cv6", c_, c_, 3),
                ConvSlot(f"{p}.cv7", 2 * c_, self.c_out, 1),
            ]
        if kind == "DetectHead":
            return [ConvSlot(f"{p}.m.{i}", c, 3 * no, 1, bn=False) for i, c in enumerate(detect_in)]
        return []

    def params_str(self) -> str:
        if self.kind == "ConvBlock":
            return f"{self.c_in}->{self.c_out} k{self.k} s{self.stride}"
        if self.kind in ("C3", "C2f"):
            return f"{self.c_in}->{self.c_out} n={self.n}" + ("" if self.shortcut else " no-shortcut")
        if self.kind in ("SPPF", "SPPFCSP"):
            return f"{self.c_in}->{self.c_out} k5"
        if self.kind == "Upsample":
            return "x2 nearest"
        return f"{self.c_in}->{self.c_out}"


def _bottleneck_slots(prefix: str, c: int, k1: int) -> list[ConvSlot]:
    return [ConvSlot(f"{prefix}.cv1", c, c, k1), ConvSlot(f"{prefix}.cv2", c, c, 3)]


@dataclass(frozen=True)
class ModelGraph:
    arch_id: str
    nc: int
    layers: tuple[BlockSpec, ...]
    anchors: tuple = DEFAULT_ANCHORS
    strides: tuple[int, ...] = STRIDES

    @property
    def no(self) -> int:
        """Outputs per anchor: 4 box + 1 objectness + nc classes."""
        return self.nc + 5

    @property
    def head(self) -> BlockSpec:
        return self.layers[-1]

    def block_slots(self, block: BlockSpec) -> list[ConvSlot]:
        if block.kind == "DetectHead":
            return block.conv_slots(tuple(self.layers[i].c_out for i in block.inputs), self.no)
        return block.conv_slots()

    def conv_slots(self) -> Iterator[ConvSlot]:
        for block in self.layers:
            yield from self.block_slots(block)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        out = {}
        for slot in self.conv_slots():
            out.update(slot.param_shapes())
        return out

    def buffer_shapes(self) -> dict[str, tuple[int, ...]]:
        out = {}
        for slot in self.conv_slots():
            out.update(slot.buffer_shapes())
        return out

    def feature_blocks(self, start: int = 0, stop: int = 10) -> list[BlockSpec]:
        return [b for b in self.layers[start:stop] if b.kind in ("C3", "C2f", "SPPF", "SPPFCSP")]


def validate_graph(layers) -> None:
    """Reject forward references and channel mismatches."""
    for pos, block in enumerate(layers):
        if block.index != pos:
            raise GraphError(f"layer at position {pos} has index {block.index}")
        if block.kind not in BLOCK_KINDS:
            raise GraphError(f"layer {pos}: unknown block kind {block.kind!r}")
        for ref in block.inputs:
            if not 0 <= ref < pos:
                raise GraphError(f"layer {pos} ({block.kind}) references layer {ref}, which is not an earlier layer")
        if block.kind == "DetectHead" or pos == 0:
            continue
        produced = [layers[i].c_out for i in block.inputs]
        expected = sum(produced) if block.kind == "Concat" else produced[0]
        if block.c_in != expected:
            raise GraphError(f"layer {pos} ({block.kind}) declares c_in={block.c_in}, producers give {expected}")
        if block.kind in ("Upsample",) and block.c_out != block.c_in:
            raise GraphError(f"layer {pos}: upsample must preserve channels")
        if block.kind == "Concat" and block.c_out != block.c_in:
            raise GraphError(f"layer {pos}: concat c_out must equal summed inputs")


def build_model(arch_id: str, nc: int = 3, anchors=DEFAULT_ANCHORS) -> ModelGraph:
    if arch_id not in ARCH_IDS:
        raise GraphError(f"unknown arch_id {arch_id!r}; expected one of {', '.join(ARCH_IDS)}")
    if nc < 1:
        raise GraphError(f"nc must be >= 1, got {nc}")
    feat = "C3" if arch_id == "yolov5s" else "C2f"
    pyramid = "SPPFCSP" if arch_id == "yolov5s-straw" else "SPPF"

    layers: list[BlockSpec] = []

    def add(kind, inputs, c_in, c_out, **kw):
        inputs = tuple(len(layers) - 1 if i == -1 else i for i in inputs)
        layers.append(BlockSpec(len(layers), kind, inputs, c_in, c_out, **kw))

    # backbone
    add("ConvBlock", (), 3, 32, k=6, stride=2)
    add("ConvBlock", (-1,), 32, 64, k=3, stride=2)
    add(feat, (-1,), 64, 64, n=1)
    add("ConvBlock", (-1,), 64, 128, k=3, stride=2)
    add(feat, (-1,), 128, 128, n=2)
    add("ConvBlock", (-1,), 128, 256, k=3, stride=2)
    add(feat, (-1,), 256, 256, n=3)
    add("ConvBlock", (-1,), 256, 512, k=3, stride=2)
    add(feat, (-1,), 512, 512, n=1)
    add(pyramid, (-1,), 512, 512, k=5)
    # neck
    add("ConvBlock", (-1,), 512, 256, k=1)
    add("Upsample", (-1,), 256, 256)
    add("Concat", (-1, 6), 512, 512)
    add("C3", (-1,), 512, 256, n=1, shortcut=False)
    add("ConvBlock", (-1,), 256, 128, k=1)
    add("Upsample", (-1,), 128, 128)
    add("Concat", (-1, 4), 256, 256)
    add("C3", (-1,), 256, 128, n=1, shortcut=False)
    add("ConvBlock", (-1,), 128, 128, k=3, stride=2)
    add("Concat", (-1, 14), 256, 256)
    add("C3", (-1,), 256, 256, n=1, shortcut=False)
    add("ConvBlock", (-1,), 256, 256, k=3, stride=2)
    add("Concat", (-1, 10), 512, 512)
    add("C3", (-1,), 512, 512, n=1, shortcut=False)
    add("DetectHead", (17, 20, 23), 0, 3 * (nc + 5))

    validate_graph(layers)
    return ModelGraph(arch_id, nc, tuple(layers), tuple(tuple(tuple(a) for a in s) for s in anchors))


def block_params(graph: ModelGraph, block: BlockSpec) -> int:
    return sum(s.num_params() for s in graph.block_slots(block))


def count_params(graph: ModelGraph) -> int:
    """Trainable parameters: conv weights, conv biases, and batchnorm gamma/beta."""
    return sum(block_params(graph, b) for b in graph.layers)


def output_shapes(graph: ModelGraph, h: int, w: int) -> list[tuple[int, int, int]]:
    """(channels, height, width) produced by each layer (head: first detect output)."""
    shapes: list[tuple[int, int, int]] = []
    for block in graph.layers:
        if block.index == 0:
            ih, iw = h, w
        else:
            _, ih, iw = shapes[block.inputs[0]]
        if block.kind == "ConvBlock":
            oh, ow = graph.block_slots(block)[0].out_hw(ih, iw)
        elif block.kind == "Upsample":
            oh, ow = 2 * ih, 2 * iw
        else:
            oh, ow = ih, iw
        shapes.append((block.c_out, oh, ow))
    return shapes


def head_shapes(graph: ModelGraph, h: int, w: int) -> list[tuple[int, int, int, int]]:
    shapes = output_shapes(graph, h, w)
    return [(1, 3 * graph.no, shapes[i][1], shapes[i][2]) for i in graph.head.inputs]


def block_macs(graph: ModelGraph, block: BlockSpec, shapes) -> int:
    if block.kind == "DetectHead":
        return sum(slot.macs(*shapes[i][1:]) for slot, i in zip(graph.block_slots(block), block.inputs))
    if block.index == 0:
        raise GraphError("block_macs needs the input size for layer 0; use count_flops")
    ih, iw = shapes[block.inputs[0]][1:]
    return sum(slot.macs(ih, iw) for slot in graph.block_slots(block))


def count_flops(graph: ModelGraph, input_hw: int = 640) -> float:
    """GFLOPs of one forward pass at batch 1: 2 x multiply-accumulates, convolutions only."""
    if input_hw % 32:
        raise GraphError(f"input size {input_hw} is not divisible by 32")
    shapes = output_shapes(graph, input_hw, input_hw)
    total = graph.block_slots(graph.layers[0])[0].macs(input_hw, input_hw)
    for block in graph.layers[1:]:
        total += block_macs(graph, block, shapes)
    return 2.0 * total / 1e9


def describe(graph: ModelGraph, input_hw: int = 640) -> str:
    """Plain-text layer table followed by totals."""
    shapes = output_shapes(graph, input_hw, input_hw)
    rows = [f"{'idx':>3}  {'kind':<10} {'params':<24} {'inputs':<12} {'out-shape':<16} {'param-count':>11}"]
    for block in graph.layers:
        inputs = ",".join(str(i) for i in block.inputs) or "input"
        if block.kind == "DetectHead":
            out = " ".join(f"{block.c_out}x{shapes[i][1]}x{shapes[i][2]}" for i in block.inputs)
            params = f"nc={graph.nc} na=3"
        else:
            c, h, w = shapes[block.index]
            out = f"{c}x{h}x{w}"
            params = block.params_str()
        rows.append(f"{block.index:>3}  {block.kind:<10} {params:<24} {inputs:<12} {out:<16} {block_params(graph, block):>11,}")
    rows.append("")
    rows.append(f"arch: {graph.arch_id}  classes: {graph.nc}")
    rows.append(f"parameters: {count_params(graph):,}")
    rows.append(f"GFLOPs@{input_hw}: {count_flops(graph, input_hw):.1f}")
    return "\n".join(rows)
