"""Layer evaluation over packed ciphertexts.

Two convolution styles:

* dense style: the input is one flattened ciphertext.  Every output
  element costs one plaintext multiply (the filter scattered to its patch
  positions, zero elsewhere) followed by a rotate-and-sum over the
  occupied payload, i.e. ceil(log2 m) rotations and additions.  The raw
  results land in slot 0 of per-output ciphertexts and are then placed
  into an output layout by one-hot assembly masks plus combining
  rotations; that assembly phase is tallied separately because the usual
  per-layer complexity formulas do not include it.
* column style: the input is the K-column patch matrix.  Output channel o
  is sum_k w[k, o] * column_k - one broadcast plaintext multiply per
  weight and K-1 additions per output channel, no rotations at all.

A factorized layer evaluates the d x d rank-r left factor with either
style, regroups per channel (free between column-packed stages), and
applies the 1 x 1 right factor column-style.  It consumes exactly two
multiplicative levels where the unfactorized layer consumes one.

Every function returns (output, phases) where phases carry the exact
operation counts consumed per phase.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hesim import HeContext, OpCounters, SlotCiphertext, rotations_for_span
from .packing import (
    ChannelPacked,
    ConvPacked,
    DensePacked,
    KernelSpec,
    TensorShape,
    combine_to_dense,
    h_grouping,
    source_slots,
)


@dataclass(frozen=True)
class WeightMatrix:
    """K x O_c quantized weights; real value = entry * scale."""

    entries: np.ndarray
    bits: int = 8
    scale: float = 1.0

    def __post_init__(self):
        if self.entries.ndim != 2:
            raise ValueError("weight matrix must be 2D")
        if self.entries.size and int(np.max(np.abs(self.entries.astype(object)))) >= 2 ** (self.bits - 1):
            raise ValueError(f"entries exceed {self.bits}-bit signed range")

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    @property
    def out_channels(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class BiasVector:
    entries: np.ndarray
    scale: float = 1.0


@dataclass(frozen=True)
class PhaseCost:
    name: str
    counters: OpCounters


def _phase(ctx: HeContext, name: str, before: OpCounters) -> PhaseCost:
    return PhaseCost(name=name, counters=ctx.counters - before)


def _scatter_plain(ctx: HeContext, indices, values, tracked: bool):
    if not tracked:
        return None
    buf = np.zeros(ctx.params.n_slots, dtype=np.int64)
    buf[indices] = values
    return ctx.encode(buf)


def _prefix_plain(ctx: HeContext, length: int, value: int, tracked: bool):
    if not tracked:
        return None
    buf = np.zeros(ctx.params.n_slots, dtype=np.int64)
    buf[:length] = value
    return ctx.encode(buf)


# ----------------------------------------------------------------------
# dense-style convolution
# ----------------------------------------------------------------------

def _dense_dot_products(x: DensePacked, w: WeightMatrix, kernel: KernelSpec,
                        ctx: HeContext) -> tuple[list[SlotCiphertext], int]:
    """One ciphertext per output element (channel-major order), result in
    slot 0.  Span m is the occupied input length, which always covers the
    scattered filter support."""
    idx = source_slots(x.shape, kernel)
    if w.k != idx.shape[1]:
        raise ValueError(f"weight matrix has {w.k} rows, kernel needs {idx.shape[1]}")
    m = x.occupied
    tracked = x.ct.tracked
    outs = []
    for o in range(w.out_channels):
        col = w.entries[:, o]
        for s in range(idx.shape[0]):
            pv = _scatter_plain(ctx, idx[s], col, tracked)
            prod = ctx.mul_plain(x.ct, pv)
            outs.append(ctx.rotate_and_sum(prod, m))
    return outs, m


def _mask_slot0(ctx: HeContext, ct: SlotCiphertext) -> SlotCiphertext:
    pv = None
    if ct.tracked:
        buf = np.zeros(ctx.params.n_slots, dtype=np.int64)
        buf[0] = 1
        pv = ctx.encode(buf)
    return ctx.mul_plain(ct, pv, assembly=True)


def conv_dense(x: DensePacked, w: WeightMatrix, kernel: KernelSpec,
               ctx: HeContext) -> tuple[DensePacked, list[PhaseCost]]:
    """Dense-in, dense-out convolution.

    Dot-product phase: (mul_pc, add_cc, rot) = (O, O*r, O*r) with
    r = ceil(log2 m).  Assembly phase: O one-hot masks plus O-1
    rotations/additions to concatenate the results.
    """
    before = ctx.counters.copy()
    outs, _ = _dense_dot_products(x, w, kernel, ctx)
    dots = _phase(ctx, "dot-products", before)

    before = ctx.counters.copy()
    masked = [_mask_slot0(ctx, ct) for ct in outs]
    ct, _ = combine_to_dense(masked, [1] * len(masked), ctx)
    assembly = _phase(ctx, "assembly", before)

    out_shape = kernel.out_shape(x.shape)
    return DensePacked(ct=ct, shape=out_shape), [dots, assembly]


def conv_dense_to_channels(x: DensePacked, w: WeightMatrix, kernel: KernelSpec,
                           ctx: HeContext) -> tuple[ChannelPacked, list[PhaseCost]]:
    """Dense-in convolution grouped per output channel instead of into one
    flat ciphertext; assembly costs O masks and O - O_c rotations/additions."""
    before = ctx.counters.copy()
    outs, _ = _dense_dot_products(x, w, kernel, ctx)
    dots = _phase(ctx, "dot-products", before)

    ow, oh = kernel.out_dims(x.shape)
    rows = ow * oh
    before = ctx.counters.copy()
    chans = []
    for o in range(w.out_channels):
        masked = [_mask_slot0(ctx, ct) for ct in outs[o * rows:(o + 1) * rows]]
        ct, _ = combine_to_dense(masked, [1] * rows, ctx)
        chans.append(ct)
    assembly = _phase(ctx, "assembly", before)
    return ChannelPacked(cts=tuple(chans), spatial=(ow, oh)), [dots, assembly]


# ----------------------------------------------------------------------
# column-style convolution
# ----------------------------------------------------------------------

def conv_conv(x: ConvPacked, w: WeightMatrix,
              ctx: HeContext) -> tuple[ChannelPacked, list[PhaseCost]]:
    """Column-packed convolution: output channel o = sum_k w[k,o] * ct_k.

    Counts exactly (O_c*K, O_c*(K-1), 0); rotation-free by construction.
    """
    if w.k != x.k:
        raise ValueError(f"weight matrix has {w.k} rows but input has {x.k} columns")
    before = ctx.counters.copy()
    tracked = all(ct.tracked for ct in x.cts)
    chans = []
    for o in range(w.out_channels):
        acc = None
        for k in range(x.k):
            pv = _prefix_plain(ctx, x.rows, int(w.entries[k, o]), tracked)
            term = ctx.mul_plain(x.cts[k], pv)
            acc = term if acc is None else ctx.add_cc(acc, term)
        chans.append(acc)
    phase = _phase(ctx, "channel-sums", before)
    return ChannelPacked(cts=tuple(chans), spatial=x.spatial), [phase]


# ----------------------------------------------------------------------
# factorized layer
# ----------------------------------------------------------------------

FACTORIZED_PATTERNS = ("DP-HI2C-CP", "CP-HI2C-CP")


def factored_conv(x, w1: WeightMatrix, w2: WeightMatrix, kernel: KernelSpec,
                  pattern: str, ctx: HeContext) -> tuple[ChannelPacked, list[PhaseCost]]:
    """Two-stage low-rank convolution; consumes two multiplicative levels.

    DP-HI2C-CP: dense left factor, per-output results grouped per channel
    (assembly masks), then the 1x1 right factor column-style.
    CP-HI2C-CP: column-packed left factor, free regrouping, right factor
    column-style.
    """
    if w1.out_channels != w2.k:
        raise ValueError("factor ranks do not line up")
    transition = KernelSpec(d=1, stride=1, out_channels=w2.out_channels)
    if pattern == "DP-HI2C-CP":
        if not isinstance(x, DensePacked):
            raise ValueError("DP-HI2C-CP needs a dense input")
        ch1, phases = conv_dense_to_channels(x, w1, kernel, ctx)
    elif pattern == "CP-HI2C-CP":
        if not isinstance(x, ConvPacked):
            raise ValueError("CP-HI2C-CP needs a column-packed input")
        ch1, phases = conv_conv(x, w1, ctx)
    else:
        raise ValueError(f"unsupported pattern {pattern!r}; "
                         f"expected one of {FACTORIZED_PATTERNS}")
    cols = h_grouping(ch1, transition)
    ch2, ph2 = conv_conv(cols, w2, ctx)
    phases = [PhaseCost(name=f"w1-{p.name}", counters=p.counters) for p in phases]
    phases += [PhaseCost(name=f"w2-{p.name}", counters=p.counters) for p in ph2]
    return ch2, phases


# ----------------------------------------------------------------------
# fully connected, pooling, activation
# ----------------------------------------------------------------------

def fc_dense(x: DensePacked, w: WeightMatrix, bias: BiasVector | None,
             ctx: HeContext) -> tuple[list[SlotCiphertext], list[PhaseCost]]:
    """Row-major dense matrix-vector product: one plaintext multiply and a
    rotate-and-sum per output row; bias added as a free plaintext constant.
    Output o sits in slot 0 of the o-th returned ciphertext."""
    m = x.occupied
    if w.k != m:
        raise ValueError(f"weight matrix has {w.k} rows but payload is {m}")
    if bias is not None and bias.entries.shape[0] != w.out_channels:
        raise ValueError("bias length does not match output count")
    tracked = x.ct.tracked
    before = ctx.counters.copy()
    outs = []
    for o in range(w.out_channels):
        pv = _prefix_plain_values(ctx, w.entries[:, o], tracked)
        red = ctx.rotate_and_sum(ctx.mul_plain(x.ct, pv), m)
        if bias is not None:
            red = ctx.add_plain(red, _scatter_plain(ctx, [0], [int(bias.entries[o])], tracked))
        outs.append(red)
    return outs, [_phase(ctx, "row-products", before)]


def _prefix_plain_values(ctx: HeContext, values, tracked: bool):
    if not tracked:
        return None
    buf = np.zeros(ctx.params.n_slots, dtype=np.int64)
    buf[: len(values)] = values
    return ctx.encode(buf)


def avg_pool_weights(window: KernelSpec, channels: int) -> WeightMatrix:
    """Pooling as a constant-filter convolution: channel o sums its own
    d x d window (the 1/d^2 division stays on the plaintext scale ledger)."""
    k = window.d * window.d
    entries = np.zeros((k * channels, channels), dtype=np.int64)
    for ch in range(channels):
        entries[ch * k:(ch + 1) * k, ch] = 1
    return WeightMatrix(entries=entries, bits=2,
                        scale=1.0 / (window.d * window.d))


def square_layer(x, ctx: HeContext):
    """Slot-wise square of every constituent ciphertext; layout unchanged."""
    before = ctx.counters.copy()
    if isinstance(x, DensePacked):
        out = DensePacked(ct=ctx.square(x.ct), shape=x.shape)
    elif isinstance(x, ChannelPacked):
        out = ChannelPacked(cts=tuple(ctx.square(ct) for ct in x.cts),
                            spatial=x.spatial)
    elif isinstance(x, ConvPacked):
        out = ConvPacked(cts=tuple(ctx.square(ct) for ct in x.cts),
                         spatial=x.spatial)
    else:
        raise TypeError(f"not a packed tensor: {type(x)!r}")
    return out, [_phase(ctx, "square", before)]


def packed_depth(x) -> tuple[int, int]:
    """(depth, assembly_depth) of a packed tensor, max over ciphertexts."""
    if isinstance(x, DensePacked):
        cts = [x.ct]
    elif isinstance(x, (ChannelPacked, ConvPacked)):
        cts = list(x.cts)
    elif isinstance(x, SlotCiphertext):
        cts = [x]
    elif isinstance(x, (list, tuple)):
        cts = list(x)
    else:
        raise TypeError(f"not a packed tensor: {type(x)!r}")
    return max(ct.depth for ct in cts), max(ct.assembly_depth for ct in cts)
