"""Network description files and their validation.

The on-disk format is JSON with exactly these fields:

    version         format version (1)
    scheme          {"N": ..., "t": "<decimal>" | ["<factor>", ...],
                     "rotation_weight": ...}
    input_shape     {"w": ..., "h": ..., "c": ...}
    layers          [{"kind": ..., "d": ..., "stride": ...,
                      "out_channels": ..., "rank": ..., "packing_hint": ...}]

t is a decimal string (it routinely exceeds 64 bits) or a list of factor
strings whose product is the modulus.  Layer kinds: conv, ffconv, fc,
square, avgpool.  rank is required for ffconv layers only.  packing_hint
is optional and consulted by the explicit planning strategy: "dense" or
"conv" for convolutions, or one of the two-stage pattern names for
ffconv layers (dp-hi2c-cp, cp-hi2c-cp, dp-dp, cp-hi2c-dp).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .hesim import SchemeParams
from .packing import KernelSpec, TensorShape

LAYER_KINDS = ("conv", "ffconv", "fc", "square", "avgpool")
FFCONV_PATTERNS = ("dp-hi2c-cp", "cp-hi2c-cp", "dp-dp", "cp-hi2c-dp")


class NetworkError(ValueError):
    """Schema or shape violation, with the offending layer in the message."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    d: int | None = None
    stride: int = 1
    out_channels: int | None = None
    rank: int | None = None
    packing_hint: str | None = None

    def kernel(self) -> KernelSpec:
        if self.kind not in ("conv", "ffconv", "avgpool"):
            raise NetworkError(f"layer kind {self.kind} has no kernel")
        return KernelSpec(d=self.d, stride=self.stride,
                          out_channels=self.out_channels or 1)


@dataclass(frozen=True)
class NetworkSpec:
    scheme: SchemeParams
    input_shape: TensorShape
    layers: tuple[LayerSpec, ...]
    version: int = 1

    def __post_init__(self):
        self.layer_shapes()  # validate composition eagerly

    def layer_shapes(self) -> list[TensorShape]:
        """Shape after each layer; raises NetworkError on any mismatch."""
        n = self.scheme.n_slots
        shape = self.input_shape
        if shape.size > n:
            raise NetworkError(f"input of {shape.size} elements exceeds {n} slots")
        shapes = []
        for i, layer in enumerate(self.layers):
            try:
                shape = self._apply(layer, shape)
            except (ValueError, TypeError) as exc:
                raise NetworkError(f"layer {i} ({layer.kind}): {exc}") from exc
            if shape.size > n:
                raise NetworkError(
                    f"layer {i} ({layer.kind}): output of {shape.size} elements "
                    f"exceeds {n} slots")
            shapes.append(shape)
        return shapes

    @staticmethod
    def _apply(layer: LayerSpec, shape: TensorShape) -> TensorShape:
        if layer.kind == "square":
            return shape
        if layer.kind == "fc":
            if not layer.out_channels:
                raise ValueError("fc needs out_channels")
            return TensorShape(w=1, h=1, c=layer.out_channels)
        if layer.kind == "avgpool":
            if not layer.d:
                raise ValueError("avgpool needs a window size d")
            window = KernelSpec(d=layer.d, stride=layer.stride, out_channels=shape.c)
            return window.out_shape(shape)
        if layer.kind in ("conv", "ffconv"):
            if not layer.d or not layer.out_channels:
                raise ValueError("conv needs d and out_channels")
            kernel = layer.kernel()
            if layer.kind == "ffconv":
                k = kernel.k_columns(shape.c)
                if layer.rank is None:
                    raise ValueError("ffconv needs a rank")
                if not 1 <= layer.rank <= min(k, layer.out_channels):
                    raise ValueError(
                        f"rank {layer.rank} outside [1, {min(k, layer.out_channels)}]")
            elif layer.rank is not None:
                raise ValueError("rank is only meaningful for ffconv layers")
            if layer.packing_hint is not None:
                allowed = FFCONV_PATTERNS if layer.kind == "ffconv" else ("dense", "conv")
                if layer.packing_hint not in allowed:
                    raise ValueError(f"packing_hint must be one of {allowed}")
            return kernel.out_shape(shape)
        raise ValueError(f"unknown layer kind {layer.kind!r}")


def _parse_modulus(value) -> int:
    if isinstance(value, str):
        return int(value)
    if isinstance(value, list):
        return math.prod(int(f) for f in value)
    raise NetworkError("scheme.t must be a decimal string or a list of factor strings")


def network_from_dict(doc: dict) -> NetworkSpec:
    try:
        version = doc["version"]
        scheme_doc = doc["scheme"]
        shape_doc = doc["input_shape"]
        layer_docs = doc["layers"]
    except (KeyError, TypeError) as exc:
        raise NetworkError(f"missing required field: {exc}") from exc
    if version != 1:
        raise NetworkError(f"unsupported version {version!r}")
    scheme = SchemeParams(
        n_slots=int(scheme_doc["N"]),
        t=_parse_modulus(scheme_doc["t"]),
        rotation_weight=float(scheme_doc.get("rotation_weight", 10.0)),
    )
    shape = TensorShape(w=int(shape_doc["w"]), h=int(shape_doc["h"]), c=int(shape_doc["c"]))
    layers = []
    for i, ld in enumerate(layer_docs):
        if not isinstance(ld, dict) or "kind" not in ld:
            raise NetworkError(f"layer {i}: expected an object with a 'kind'")
        if ld["kind"] not in LAYER_KINDS:
            raise NetworkError(f"layer {i}: unknown kind {ld['kind']!r}")
        layers.append(LayerSpec(
            kind=ld["kind"],
            d=ld.get("d"),
            stride=int(ld.get("stride", 1)),
            out_channels=ld.get("out_channels"),
            rank=ld.get("rank"),
            packing_hint=ld.get("packing_hint"),
        ))
    return NetworkSpec(scheme=scheme, input_shape=shape, layers=tuple(layers))


def network_to_dict(net: NetworkSpec) -> dict:
    return {
        "version": net.version,
        "scheme": {
            "N": net.scheme.n_slots,
            "t": str(net.scheme.t),
            "rotation_weight": net.scheme.rotation_weight,
        },
        "input_shape": {"w": net.input_shape.w, "h": net.input_shape.h,
                        "c": net.input_shape.c},
        "layers": [
            {k: v for k, v in {
                "kind": l.kind, "d": l.d, "stride": l.stride,
                "out_channels": l.out_channels, "rank": l.rank,
                "packing_hint": l.packing_hint,
            }.items() if v is not None}
            for l in net.layers
        ],
    }


def load_network(path) -> NetworkSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}: not valid JSON: {exc}") from exc
    return network_from_dict(doc)


def save_network(net: NetworkSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_dict(net), fh, indent=2, sort_keys=True)
        fh.write("\n")
