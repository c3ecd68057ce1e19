"""Reference configurations for the MNIST and CIFAR-scale pipelines.

Four named presets pair a network architecture with the cryptosystem
settings used by the published measurements:

    lola-tinynet     N = 8192,  t = 1099511922689
    ffconv-tinynet   N = 8192,  t = 576460752303439873
    lola-widenet     N = 16384, t = 34359771137 * 34360754177
    ffconv-widenet   N = 16384, t = 9007199255560193 * 9007199255658497

TinyNet is one 8x8 stride-2 convolution (54 output channels; the
published per-layer pipeline combines 54 channel blocks with 53
rotations), a square activation, and a 10-way fully connected layer on
28x28x1 inputs.  The factorized variant splits the convolution into a
rank-13 8x8 stage and a 1x1 stage restoring 54 channels.

WideNet is conv(8x8, s2, 83) -> square -> conv(6x6, s2, 163) -> square ->
fc(10).  The published pipeline runs it on 32x32x3 images padded to
34x34x3 before encryption, making the first convolution's output
14x14x83 = 16268 slots; this engine evaluates valid (padding-free)
convolutions, so the preset declares the padded client-side shape.  The
factorized variant replaces the second convolution with a rank-20 6x6
stage plus a 1x1 stage restoring 163 channels.

WIDENET_CONV2_BASELINE_SPAN is the reduction span behind the published
52,975-rotation baseline for the dense second convolution (4075 outputs
times 13 rotate-add rounds).  It is inconsistent with both the occupied
input length (16268 -> 14 rounds) and the filter support (2988 -> 12
rounds); it is kept as a recorded constant so the baseline and the
86.48% reduction can be reproduced, and cost reports flag the divergence
from the engine's occupied-length span.
"""

from __future__ import annotations

from .hesim import SchemeParams
from .netspec import LayerSpec, NetworkSpec
from .packing import TensorShape

WIDENET_CONV2_BASELINE_SPAN = 6912
WIDENET_CONV2_BASELINE_OUTPUTS = 4075

# published totals for the replaced WideNet convolution: reported MulPC
# after factorization (3575) does not match the stage-wise derivation
# (500 + 163*20 = 3760); reports print the derived value and note this.
WIDENET_CONV2_REPORTED_MULPC = 3575

TINYNET_CONV_CHANNELS = 54
TINYNET_RANK = 13
WIDENET_RANK = 20


def _tinynet_layers(factorized: bool) -> tuple[LayerSpec, ...]:
    if factorized:
        conv = LayerSpec(kind="ffconv", d=8, stride=2,
                         out_channels=TINYNET_CONV_CHANNELS, rank=TINYNET_RANK,
                         packing_hint="cp-hi2c-cp")
    else:
        conv = LayerSpec(kind="conv", d=8, stride=2,
                         out_channels=TINYNET_CONV_CHANNELS, packing_hint="conv")
    return (conv,
            LayerSpec(kind="square"),
            LayerSpec(kind="fc", out_channels=10))


def _widenet_layers(factorized: bool) -> tuple[LayerSpec, ...]:
    if factorized:
        conv2 = LayerSpec(kind="ffconv", d=6, stride=2, out_channels=163,
                          rank=WIDENET_RANK, packing_hint="dp-hi2c-cp")
    else:
        conv2 = LayerSpec(kind="conv", d=6, stride=2, out_channels=163,
                          packing_hint="dense")
    return (LayerSpec(kind="conv", d=8, stride=2, out_channels=83, packing_hint="conv"),
            LayerSpec(kind="square"),
            conv2,
            LayerSpec(kind="square"),
            LayerSpec(kind="fc", out_channels=10))


def _build(name: str) -> NetworkSpec:
    if name == "lola-tinynet":
        return NetworkSpec(
            scheme=SchemeParams(n_slots=8192, t=1099511922689),
            input_shape=TensorShape(w=28, h=28, c=1),
            layers=_tinynet_layers(factorized=False))
    if name == "ffconv-tinynet":
        return NetworkSpec(
            scheme=SchemeParams(n_slots=8192, t=576460752303439873),
            input_shape=TensorShape(w=28, h=28, c=1),
            layers=_tinynet_layers(factorized=True))
    if name == "lola-widenet":
        return NetworkSpec(
            scheme=SchemeParams(n_slots=16384, t=34359771137 * 34360754177),
            input_shape=TensorShape(w=34, h=34, c=3),
            layers=_widenet_layers(factorized=False))
    if name == "ffconv-widenet":
        return NetworkSpec(
            scheme=SchemeParams(n_slots=16384, t=9007199255560193 * 9007199255658497),
            input_shape=TensorShape(w=34, h=34, c=3),
            layers=_widenet_layers(factorized=True))
    raise KeyError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")


PRESET_NAMES = ("lola-tinynet", "ffconv-tinynet", "lola-widenet", "ffconv-widenet")


def preset_network(name: str) -> NetworkSpec:
    return _build(name)
