"""Packed tensor layouts and the transitions between them.

Two encrypted layouts are supported:

* dense: the whole 3D tensor flattened into one ciphertext, channel-major
  with the width index fastest: slot(ch, y, x) = ch*w*h + y*w + x.  Each
  channel occupies one contiguous block, which the grouping and combine
  transitions exploit.
* columns ("conv" packing): the S x K patch matrix of the consuming layer,
  one ciphertext per column k, slot s holding row s.  Rows are output
  positions (s = oy*O_w + ox), columns enumerate the receptive field
  channel-major (k = ch*d*d + ky*d + kx).

A convolution evaluated on columns yields one ciphertext per output
channel (slot s = output position s); that per-channel form is the third
container here and the bridge between layers.

Each homomorphic transition carries an exact operation-count contract
(documented per function); schedules charge one rotation per scheduled
slot move, including moves whose displacement happens to be zero, so the
measured rotation counts match the closed-form per-move tallies.
Convolutions are valid-style (no implicit zero padding); pad inputs
client-side before packing if needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .hesim import CapacityError, HeContext, SlotCiphertext


@dataclass(frozen=True)
class TensorShape:
    """Width x height x channels of an unencrypted 3D tensor."""

    w: int
    h: int
    c: int

    def __post_init__(self):
        if min(self.w, self.h, self.c) < 1:
            raise ValueError(f"shape dimensions must be >= 1, got {self}")

    @property
    def size(self) -> int:
        return self.w * self.h * self.c

    def slot(self, x: int, y: int, ch: int) -> int:
        return ch * self.w * self.h + y * self.w + x


@dataclass(frozen=True)
class KernelSpec:
    """Square kernel of size d with a spatial stride and output channels."""

    d: int
    stride: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if self.d < 1 or self.stride < 1 or self.out_channels < 1:
            raise ValueError(f"invalid kernel spec {self}")

    def out_dims(self, shape: TensorShape) -> tuple[int, int]:
        ow = (shape.w - self.d) // self.stride + 1
        oh = (shape.h - self.d) // self.stride + 1
        if ow < 1 or oh < 1:
            raise ValueError(f"kernel {self} does not fit input {shape}")
        return ow, oh

    def out_shape(self, shape: TensorShape) -> TensorShape:
        ow, oh = self.out_dims(shape)
        return TensorShape(w=ow, h=oh, c=self.out_channels)

    def k_columns(self, in_channels: int) -> int:
        return self.d * self.d * in_channels


@dataclass(frozen=True)
class DensePacked:
    """One ciphertext holding a whole tensor; slots past w*h*c are zero."""

    ct: SlotCiphertext
    shape: TensorShape

    @property
    def occupied(self) -> int:
        return self.shape.size


@dataclass(frozen=True)
class ConvPacked:
    """K ciphertexts of patch-matrix columns; slots past S are zero."""

    cts: tuple[SlotCiphertext, ...]
    spatial: tuple[int, int]   # (O_w, O_h) of the consuming layer

    @property
    def k(self) -> int:
        return len(self.cts)

    @property
    def rows(self) -> int:
        return self.spatial[0] * self.spatial[1]


@dataclass(frozen=True)
class ChannelPacked:
    """One ciphertext per channel, slot s = value at output position s."""

    cts: tuple[SlotCiphertext, ...]
    spatial: tuple[int, int]

    @property
    def channels(self) -> int:
        return len(self.cts)

    @property
    def rows(self) -> int:
        return self.spatial[0] * self.spatial[1]

    def shape(self) -> TensorShape:
        return TensorShape(w=self.spatial[0], h=self.spatial[1], c=self.channels)


# ----------------------------------------------------------------------
# geometry helpers
# ----------------------------------------------------------------------

@lru_cache(maxsize=256)
def _patch_positions_cached(w, h, d, stride):
    ow = (w - d) // stride + 1
    oh = (h - d) // stride + 1
    ky, kx = np.divmod(np.arange(d * d), d)
    oy, ox = np.divmod(np.arange(oh * ow), ow)
    rows = (oy[:, None] * stride + ky[None, :]) * w
    cols = ox[:, None] * stride + kx[None, :]
    pos = rows + cols
    pos.setflags(write=False)
    return pos


def patch_positions(shape: TensorShape, kernel: KernelSpec) -> np.ndarray:
    """(S, d*d) spatial slot offsets of each patch element, per output row."""
    kernel.out_dims(shape)  # fit check
    return _patch_positions_cached(shape.w, shape.h, kernel.d, kernel.stride)


def source_slots(shape: TensorShape, kernel: KernelSpec) -> np.ndarray:
    """(S, K) dense-layout slot index of patch element k at output row s."""
    pos = patch_positions(shape, kernel)
    plane = shape.w * shape.h
    offsets = np.arange(shape.c) * plane
    # columns are channel-major: k = ch*d*d + (ky*d + kx)
    return (offsets[:, None, None] + pos[None, :, :]).transpose(1, 0, 2).reshape(
        pos.shape[0], shape.c * kernel.d * kernel.d)


# ----------------------------------------------------------------------
# client-side packing (never counted)
# ----------------------------------------------------------------------

def dense_pack(tensor: np.ndarray, ctx: HeContext, tracked: bool = True) -> DensePacked:
    """Flatten a (c, h, w) integer tensor into one ciphertext."""
    c, h, w = tensor.shape
    shape = TensorShape(w=w, h=h, c=c)
    if shape.size > ctx.params.n_slots:
        raise CapacityError(f"tensor of {shape.size} elements exceeds "
                            f"{ctx.params.n_slots} slots")
    if not tracked:
        return DensePacked(ct=ctx.encrypt_untracked(), shape=shape)
    return DensePacked(ct=ctx.encrypt(tensor.reshape(-1)), shape=shape)


def dense_unpack(x: DensePacked, ctx: HeContext) -> np.ndarray:
    vals = ctx.decrypt(x.ct)[: x.occupied]
    return np.array(vals, dtype=object).reshape(x.shape.c, x.shape.h, x.shape.w)


def plain_im2col(tensor: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """Patch matrix of a (c, h, w) tensor: S rows, K = d*d*c columns."""
    c, h, w = tensor.shape
    shape = TensorShape(w=w, h=h, c=c)
    ow, oh = kernel.out_dims(shape)
    d, st = kernel.d, kernel.stride
    cols = np.empty((oh * ow, c * d * d), dtype=tensor.dtype)
    k = 0
    for ch in range(c):
        for ky in range(d):
            for kx in range(d):
                patch = tensor[ch, ky: ky + st * oh: st, kx: kx + st * ow: st]
                cols[:, k] = patch.reshape(-1)
                k += 1
    return cols


def conv_pack(columns: np.ndarray, ctx: HeContext, spatial: tuple[int, int],
              tracked: bool = True) -> ConvPacked:
    """Pack an S x K patch matrix into K ciphertexts (client side)."""
    s, k = columns.shape
    if s != spatial[0] * spatial[1]:
        raise ValueError("row count does not match the spatial dims")
    if s > ctx.params.n_slots:
        raise CapacityError(f"{s} rows exceed {ctx.params.n_slots} slots")
    if not tracked:
        cts = tuple(ctx.encrypt_untracked() for _ in range(k))
    else:
        cts = tuple(ctx.encrypt(columns[:, j]) for j in range(k))
    return ConvPacked(cts=cts, spatial=spatial)


def conv_unpack(x: ConvPacked, ctx: HeContext) -> np.ndarray:
    cols = [ctx.decrypt(ct)[: x.rows] for ct in x.cts]
    return np.stack(cols, axis=1)


def channel_unpack(x: ChannelPacked, ctx: HeContext) -> np.ndarray:
    """(c, h, w) tensor from per-channel ciphertexts."""
    ow, oh = x.spatial
    chans = [np.array(ctx.decrypt(ct)[: x.rows], dtype=object).reshape(oh, ow)
             for ct in x.cts]
    return np.stack(chans, axis=0)


# ----------------------------------------------------------------------
# homomorphic transitions
# ----------------------------------------------------------------------

def _one_hot(ctx: HeContext, index: int, tracked: bool):
    if not tracked:
        return None
    buf = np.zeros(ctx.params.n_slots, dtype=np.int64)
    buf[index] = 1
    return ctx.encode(buf)


def _band(ctx: HeContext, start: int, stop: int, tracked: bool):
    if not tracked:
        return None
    buf = np.zeros(ctx.params.n_slots, dtype=np.int64)
    buf[start:stop] = 1
    return ctx.encode(buf)


def _im2col_moves(ctx: HeContext, kernel: KernelSpec, in_shape: TensorShape,
                  sources, tracked: bool) -> ConvPacked:
    """Mask-once, move-per-destination rearrangement shared by both
    homomorphic patch-matrix builders.

    ``sources(s, ch, ky, kx)`` yields (source ciphertext, source slot).
    Costs: one data mask per distinct source element (at most the element
    count of the input), and exactly one rotation plus one addition per
    destination slot, i.e. S*K of each.
    """
    n = ctx.params.n_slots
    ow, oh = kernel.out_dims(in_shape)
    s_rows = ow * oh
    if s_rows > n:
        raise CapacityError(f"{s_rows} output rows exceed {n} slots")
    masks: dict[tuple[int, int], SlotCiphertext] = {}
    cols = []
    for ch in range(in_shape.c):
        for ky in range(kernel.d):
            for kx in range(kernel.d):
                acc = ctx.encrypt_zero(tracked=tracked)
                for s in range(s_rows):
                    src_ct, src_slot, key = sources(s, ch, ky, kx)
                    masked = masks.get(key)
                    if masked is None:
                        masked = ctx.mul_plain(src_ct, _one_hot(ctx, src_slot, tracked))
                        masks[key] = masked
                    moved = ctx.rotate(masked, (src_slot - s) % n, charge_identity=True)
                    acc = ctx.add_cc(acc, moved)
                cols.append(acc)
    return ConvPacked(cts=tuple(cols), spatial=(ow, oh))


def h_im2col_from_dense(x: DensePacked, kernel: KernelSpec, ctx: HeContext) -> ConvPacked:
    """Build the consuming layer's column ciphertexts out of a dense input.

    Counts: mul_pc <= w*h*c (one mask per distinct element used),
    add_cc = rot = O_w*O_h*K with K = d*d*c of the consuming kernel.
    """
    if kernel.d <= 1:
        raise ValueError("d=1 needs no patch rebuild; use h_grouping_from_dense")
    shape = x.shape
    pos = patch_positions(shape, kernel)
    plane = shape.w * shape.h
    tracked = x.ct.tracked

    def sources(s, ch, ky, kx):
        slot = ch * plane + int(pos[s, ky * kernel.d + kx])
        return x.ct, slot, (0, slot)

    return _im2col_moves(ctx, kernel, shape, sources, tracked)


def h_im2col_from_conv(x: ChannelPacked, kernel: KernelSpec, ctx: HeContext) -> ConvPacked:
    """Same rearrangement, sourcing from per-channel ciphertexts."""
    if kernel.d <= 1:
        raise ValueError("d=1 needs no patch rebuild; use h_grouping")
    shape = x.shape()
    pos = patch_positions(shape, kernel)
    tracked = all(ct.tracked for ct in x.cts)

    def sources(s, ch, ky, kx):
        slot = int(pos[s, ky * kernel.d + kx])
        return x.cts[ch], slot, (ch, slot)

    return _im2col_moves(ctx, kernel, shape, sources, tracked)


def h_grouping(x: ChannelPacked, kernel: KernelSpec) -> ConvPacked:
    """1x1 stride-1 transition between column-packed layers: the channel
    ciphertexts already are the columns.  Zero homomorphic operations."""
    if kernel.d != 1:
        raise ValueError(f"grouping requires d=1, got d={kernel.d}")
    if kernel.stride != 1:
        raise ValueError("grouping requires stride 1")
    return ConvPacked(cts=x.cts, spatial=x.spatial)


def h_grouping_from_dense(x: DensePacked, kernel: KernelSpec, ctx: HeContext) -> ConvPacked:
    """Split a dense tensor into per-channel column ciphertexts for a 1x1
    layer: one band mask and one alignment rotation per channel (the
    rotation for channel 0 has amount 0 and is never issued).

    Counts: mul_pc = c, add_cc = 0, rot <= c (exactly c - 1 issued).
    """
    if kernel.d != 1:
        raise ValueError(f"grouping requires d=1, got d={kernel.d}")
    if kernel.stride != 1:
        raise ValueError("grouping requires stride 1")
    shape = x.shape
    plane = shape.w * shape.h
    n = ctx.params.n_slots
    tracked = x.ct.tracked
    cols = []
    for ch in range(shape.c):
        start = ch * plane
        masked = ctx.mul_plain(x.ct, _band(ctx, start, start + plane, tracked))
        cols.append(ctx.rotate(masked, start % n))
    return ConvPacked(cts=tuple(cols), spatial=(shape.w, shape.h))


def combine_to_dense(cts, lengths, ctx: HeContext) -> tuple[SlotCiphertext, int]:
    """Concatenate slot-0-anchored payloads into one ciphertext.

    Counts: len(cts) - 1 rotations and as many additions (the first block
    is already in place).  Returns the combined ciphertext and the total
    payload length.
    """
    if len(cts) != len(lengths) or not cts:
        raise ValueError("need one payload length per ciphertext")
    n = ctx.params.n_slots
    total = int(sum(lengths))
    if total > n:
        raise CapacityError(f"combined payload of {total} exceeds {n} slots")
    out = cts[0]
    offset = int(lengths[0])
    for ct, length in zip(cts[1:], lengths[1:]):
        out = ctx.add_cc(out, ctx.rotate(ct, (n - offset) % n))
        offset += int(length)
    return out, total


def channels_to_dense(x: ChannelPacked, ctx: HeContext) -> DensePacked:
    """Per-channel ciphertexts -> one dense tensor (channel blocks in order)."""
    ct, _ = combine_to_dense(list(x.cts), [x.rows] * x.channels, ctx)
    return DensePacked(ct=ct, shape=x.shape())
