"""Weight files: a JSON manifest plus concatenated raw tensors.

Layout of a weight file:

    bytes 0..7      magic b"CPKW0001"
    bytes 8..11     manifest length (uint32, little endian)
    manifest        UTF-8 JSON
    data            all tensors back to back, in manifest order

The manifest holds, per tensor: name, shape, quantization bit width,
scale (decimal string; real value = int * scale), and the byte offset of
the tensor inside the data section.  Tensors are little-endian
two's-complement 32-bit integers in row-major (C) order, so files are
bit-exact across platforms.  A sha256 of the data section is stored for
corruption detection.

Tensor naming convention consumed by the runner, for layer i:

    conv     layer{i}.weight  (d, d, in_c, out_c)
    ffconv   layer{i}.w1      (d, d, in_c, rank)
             layer{i}.w2      (1, 1, rank, out_c)
    fc       layer{i}.weight  (m, out_c)
             layer{i}.bias    (out_c,)

square and avgpool layers carry no tensors.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .netspec import NetworkSpec

MAGIC = b"CPKW0001"
INT32_MIN, INT32_MAX = -(1 << 31), (1 << 31) - 1


class WeightFileError(ValueError):
    pass


@dataclass(frozen=True)
class WeightTensor:
    name: str
    values: np.ndarray          # int64, but every entry fits in int32
    bits: int
    scale: float

    def __post_init__(self):
        v = self.values
        if v.size and (v.min() < INT32_MIN or v.max() > INT32_MAX):
            raise WeightFileError(f"{self.name}: entries exceed int32")


class WeightSet:
    """Ordered collection of named integer tensors."""

    def __init__(self, tensors: list[WeightTensor] | None = None):
        self._tensors: dict[str, WeightTensor] = {}
        for t in tensors or []:
            self.add(t)

    def add(self, tensor: WeightTensor) -> None:
        if tensor.name in self._tensors:
            raise WeightFileError(f"duplicate tensor {tensor.name!r}")
        self._tensors[tensor.name] = tensor

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __getitem__(self, name: str) -> WeightTensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise WeightFileError(f"missing tensor {name!r}") from None

    def names(self) -> list[str]:
        return list(self._tensors)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightSet):
            return NotImplemented
        if self.names() != other.names():
            return False
        for name in self.names():
            a, b = self[name], other[name]
            if (a.bits != b.bits or a.scale != b.scale
                    or a.values.shape != b.values.shape
                    or not (a.values == b.values).all()):
                return False
        return True


def save_weights(ws: WeightSet, path) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in ws.names():
        t = ws[name]
        blob = t.values.astype("<i4").tobytes(order="C")
        entries.append({
            "name": name,
            "shape": list(t.values.shape),
            "bits": t.bits,
            "scale": repr(float(t.scale)),
            "offset": offset,
        })
        blobs.append(blob)
        offset += len(blob)
    data = b"".join(blobs)
    manifest = json.dumps({
        "tensors": entries,
        "sha256": hashlib.sha256(data).hexdigest(),
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        fh.write(data)


def load_weights(path) -> WeightSet:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise WeightFileError(f"{path}: not a weight file (bad magic)")
    (mlen,) = struct.unpack("<I", raw[8:12])
    try:
        manifest = json.loads(raw[12:12 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFileError(f"{path}: corrupt manifest: {exc}") from exc
    data = raw[12 + mlen:]
    digest = hashlib.sha256(data).hexdigest()
    if digest != manifest.get("sha256"):
        raise WeightFileError(f"{path}: data checksum mismatch (corrupt file)")
    ws = WeightSet()
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(data):
            raise WeightFileError(f"{path}: tensor {entry['name']!r} overruns the file")
        values = np.frombuffer(data[start:end], dtype="<i4").astype(np.int64)
        ws.add(WeightTensor(name=entry["name"], values=values.reshape(shape),
                            bits=int(entry["bits"]), scale=float(entry["scale"])))
    return ws


# ----------------------------------------------------------------------
# weights for a network
# ----------------------------------------------------------------------

def required_tensors(net: NetworkSpec) -> dict[str, tuple[int, ...]]:
    """name -> shape for every tensor the network needs."""
    shapes = {}
    cur = net.input_shape
    for i, layer in enumerate(net.layers):
        if layer.kind == "conv":
            shapes[f"layer{i}.weight"] = (layer.d, layer.d, cur.c, layer.out_channels)
        elif layer.kind == "ffconv":
            shapes[f"layer{i}.w1"] = (layer.d, layer.d, cur.c, layer.rank)
            shapes[f"layer{i}.w2"] = (1, 1, layer.rank, layer.out_channels)
        elif layer.kind == "fc":
            shapes[f"layer{i}.weight"] = (cur.size, layer.out_channels)
            shapes[f"layer{i}.bias"] = (layer.out_channels,)
        cur = NetworkSpec._apply(layer, cur)
    return shapes


def validate_weights(net: NetworkSpec, ws: WeightSet) -> None:
    """Raise with a layer-indexed message on any missing or misshapen tensor."""
    for name, shape in required_tensors(net).items():
        if name not in ws:
            raise WeightFileError(f"{name}: tensor missing from weight file")
        got = ws[name].values.shape
        if got != shape:
            raise WeightFileError(f"{name}: expected shape {shape}, found {got}")


def random_weights(net: NetworkSpec, rng: np.random.Generator,
                   bits: int = 8, bound: int | None = None) -> WeightSet:
    """Plausible random quantized weights for count-level runs and tests."""
    limit = bound if bound is not None else 2 ** (bits - 1) - 1
    ws = WeightSet()
    for name, shape in required_tensors(net).items():
        vals = rng.integers(-limit, limit + 1, size=shape)
        ws.add(WeightTensor(name=name, values=vals, bits=bits, scale=1.0 / max(limit, 1)))
    return ws
