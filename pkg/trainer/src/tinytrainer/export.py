"""Quantize a trained model and write the inference engine's file formats.

Weight file layout (independent implementation of the engine's format):
magic ``CPKW0001``, little-endian uint32 manifest length, JSON manifest
(per tensor: name, shape, quantization bits, scale as a decimal string,
byte offset; plus a sha256 of the data section), then the tensors as
little-endian int32 in row-major order, concatenated in manifest order.

Quantization is symmetric and per-tensor: scale = max|w| / (2^(bits-1)-1),
integers rounded half away from zero, all-zero tensors get scale 1.  The
fully-connected bias is quantized at the running activation scale times
the fc weight scale, so the engine's integer addition lines up with the
float model; raw uint8 pixels carry scale 1/255.

Alongside the weights an engine-readable network spec is emitted, with a
plaintext modulus sized from the worst-case magnitude walk (doubled for
margin) so the integer pipeline can never wrap.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np
import torch

from .model import CONV_CHANNELS, CONV_KERNEL, CONV_STRIDE, FactorizedTinyNet, TinyNet

MAGIC = b"CPKW0001"
INPUT_SCALE = 1.0 / 255.0
INPUT_MAX = 255


def quantize(w: np.ndarray, bits: int):
    if bits < 2:
        raise ValueError("need at least 2 bits")
    peak = float(np.max(np.abs(w))) if w.size else 0.0
    if peak == 0.0:
        return np.zeros(w.shape, dtype=np.int64), 1.0
    scale = peak / (2 ** (bits - 1) - 1)
    q = np.sign(w) * np.floor(np.abs(w) / scale + 0.5)
    return q.astype(np.int64), scale


def _conv_tensor(weight: torch.Tensor) -> np.ndarray:
    # torch (out_c, in_c, kh, kw) -> file layout (kh, kw, in_c, out_c)
    return weight.detach().permute(2, 3, 1, 0).cpu().numpy().astype(np.float64)


def _write_weight_file(path: str, tensors: list[dict]) -> None:
    blobs, entries, offset = [], [], 0
    for t in tensors:
        blob = t["values"].astype("<i4").tobytes(order="C")
        entries.append({"name": t["name"], "shape": list(t["values"].shape),
                        "bits": t["bits"], "scale": repr(float(t["scale"])),
                        "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    data = b"".join(blobs)
    manifest = json.dumps({"tensors": entries,
                           "sha256": hashlib.sha256(data).hexdigest()},
                          sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        fh.write(data)


def _column_l1(matrix: np.ndarray) -> int:
    return int(np.max(np.abs(matrix.astype(object)).sum(axis=0)))


def export(model, bits: int = 8, out_path: str = "weights.bin",
           net_out: str | None = None) -> dict:
    """Quantize and write the weight file (and the matching network spec
    when net_out is given).  Returns the per-tensor scales."""
    model = model.eval()
    tensors = []
    scales = {}
    act_scale = INPUT_SCALE
    bound = INPUT_MAX

    if isinstance(model, TinyNet):
        w = _conv_tensor(model.conv.weight)
        q, s = quantize(w, bits)
        tensors.append({"name": "layer0.weight", "values": q, "bits": bits, "scale": s})
        act_scale *= s
        bound *= _column_l1(q.reshape(-1, q.shape[-1]))
        conv_layers = [{"kind": "conv", "d": CONV_KERNEL, "stride": CONV_STRIDE,
                        "out_channels": CONV_CHANNELS, "packing_hint": "conv"}]
    elif isinstance(model, FactorizedTinyNet):
        w1 = _conv_tensor(model.conv1.weight)
        q1, s1 = quantize(w1, bits)
        w2 = _conv_tensor(model.conv2.weight)
        q2, s2 = quantize(w2, bits)
        tensors.append({"name": "layer0.w1", "values": q1, "bits": bits, "scale": s1})
        tensors.append({"name": "layer0.w2", "values": q2, "bits": bits, "scale": s2})
        act_scale *= s1 * s2
        bound *= _column_l1(q1.reshape(-1, q1.shape[-1]))
        bound *= _column_l1(q2.reshape(-1, q2.shape[-1]))
        conv_layers = [{"kind": "ffconv", "d": CONV_KERNEL, "stride": CONV_STRIDE,
                        "out_channels": CONV_CHANNELS, "rank": model.rank,
                        "packing_hint": "cp-hi2c-cp"}]
    else:
        raise TypeError(f"cannot export {type(model)!r}")

    # square layer
    act_scale = act_scale * act_scale
    bound = bound * bound

    wfc = model.fc.weight.detach().cpu().numpy().astype(np.float64).T  # (m, out)
    qfc, sfc = quantize(wfc, bits)
    tensors.append({"name": "layer2.weight", "values": qfc, "bits": bits, "scale": sfc})
    # the head is bias-free (see model module); the engine still expects a
    # bias tensor, so write zeros with the all-zero scale-1 convention
    qb = np.zeros(wfc.shape[1], dtype=np.int64)
    tensors.append({"name": "layer2.bias", "values": qb, "bits": 32, "scale": 1.0})
    bound = bound * _column_l1(qfc)

    _write_weight_file(out_path, tensors)
    scales = {t["name"]: t["scale"] for t in tensors}

    if net_out:
        modulus = 4 * bound + 3
        if modulus % 2 == 0:
            modulus += 1
        doc = {
            "version": 1,
            "scheme": {"N": 8192, "t": str(modulus), "rotation_weight": 10.0},
            "input_shape": {"w": 28, "h": 28, "c": 1},
            "layers": conv_layers + [{"kind": "square"},
                                     {"kind": "fc", "out_channels": 10}],
        }
        with open(net_out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return scales
