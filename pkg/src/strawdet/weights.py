"""Weight storage, deterministic initialisation and the SDWT weight file.

SDWT layout (all integers little-endian)::

    b"SDWT" | u32 version=1 | u32 tensor_count
    per tensor: u16 name_len | name (UTF-8) | u8 ndim | ndim x u32 dims | float32 data (row-major)
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import os
import struct
import zlib
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    DuplicateTensorError,
    TruncatedFileError,
    WeightError,
    WeightFileError,
)
from .graph import ConvSlot, ModelGraph
from .rng import SplitMix64

MAGIC = b"SDWT"
VERSION = 1


class WeightStore(Mapping):
    """Read-only map from qualified tensor name to float32 array.

    Names follow ``model.<layer>.<sub>...`` with ``conv.weight``, ``bn.weight``
    (gamma), ``bn.bias`` (beta), ``bn.running_mean``, ``bn.running_var`` per
    batch-normalised convolution and ``weight``/``bias`` for head convolutions.
    """

    def __init__(self, tensors):
        self._tensors = {}
        for name, arr in tensors.items() if isinstance(tensors, Mapping) else tensors:
            if name in self._tensors:
                raise DuplicateTensorError(f"duplicate tensor name {name!r}")
            a = np.array(arr, dtype="<f4", copy=True, order="C")
            a.flags.writeable = False
            self._tensors[name] = a

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._tensors[name]
        except KeyError:
            raise WeightError(f"missing weight slot {name!r}", slot=name) from None

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightStore) or list(self) != list(other):
            return False
        return all(self[k].shape == other[k].shape and self[k].tobytes() == other[k].tobytes() for k in self)

    def num_values(self, trainable_only: bool = False) -> int:
        return sum(a.size for k, a in self._tensors.items() if not (trainable_only and is_buffer(k)))

    def validate(self, graph: ModelGraph) -> None:
        """Every slot the graph demands is present exactly once with the right shape."""
        expected = {**graph.param_shapes(), **graph.buffer_shapes()}
        for name, shape in expected.items():
            have = self[name].shape
            if have != tuple(shape):
                raise WeightError(f"slot {name!r} has shape {have}, graph expects {tuple(shape)}", slot=name)
        extra = [k for k in self if k not in expected]
        if extra:
            raise WeightError(f"weight file has slot {extra[0]!r} not used by {graph.arch_id}", slot=extra[0])


def is_buffer(name: str) -> bool:
    return name.endswith(".running_mean") or name.endswith(".running_var")


def _slot_tensors(slot: ConvSlot, draw):
    w_name = next(iter(slot.param_shapes()))
    yield w_name, draw(slot, (slot.c_out, slot.c_in, slot.k, slot.k))
    if slot.bn:
        yield f"{slot.name}.bn.weight", np.ones(slot.c_out, np.float32)
        yield f"{slot.name}.bn.bias", np.zeros(slot.c_out, np.float32)
        yield f"{slot.name}.bn.running_mean", np.zeros(slot.c_out, np.float32)
        yield f"{slot.name}.bn.running_var", np.ones(slot.c_out, np.float32)
    else:
        yield f"{slot.name}.bias", draw(slot, (slot.c_out,))


def init_weights(graph: ModelGraph, seed: int = 0) -> WeightStore:
    """Uniform(-b, b) convolution weights (b = sqrt(1 / fan_in)) from one SplitMix64 stream.

    Slots are filled in graph order; batchnorm starts at gamma=1, beta=0, mean=0, var=1.
    """
    rng = SplitMix64(seed)

    def draw(slot, shape):
        bound = np.sqrt(1.0 / (slot.c_in * slot.k * slot.k))
        u = rng.uniform(int(np.prod(shape)))
        return ((2.0 * u - 1.0) * bound).astype(np.float32).reshape(shape)

    return WeightStore([t for slot in graph.conv_slots() for t in _slot_tensors(slot, draw)])


def zero_weights(graph: ModelGraph) -> WeightStore:
    """All parameters zero (running variance kept at 1 so batchnorm stays defined)."""
    zeros = lambda slot, shape: np.zeros(shape, np.float32)  # noqa: E731
    return WeightStore(
        (name, arr if name.endswith("running_var") else np.zeros_like(arr))
        for slot in graph.conv_slots()
        for name, arr in _slot_tensors(slot, zeros)
    )


def encode_weights(store: WeightStore) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(store))]
    for name, arr in store.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_weights(store: WeightStore, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_weights(store))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"unexpected end of data at byte {self.pos} (need {n} more)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_weights(data: bytes) -> WeightStore:
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    r = _Reader(data)
    r.take(4)
    version, count = r.unpack("<II")
    if version != VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I")
        size = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims)
        if name in tensors:
            raise DuplicateTensorError(f"duplicate tensor name {name!r}")
        tensors[name] = arr
    (crc,) = r.unpack("<I")
    if crc != zlib.crc32(data[: r.pos - 4]):
        raise ChecksumError("CRC32 mismatch")
    if r.pos != len(data):
        raise WeightFileError(f"{len(data) - r.pos} trailing bytes after checksum")
    return WeightStore(tensors)


def load_weights(path, graph: ModelGraph | None = None) -> WeightStore:
    store = decode_weights(Path(path).read_bytes())
    if graph is not None:
        store.validate(graph)
    return store
