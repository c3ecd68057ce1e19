"""Dense and column packings of a small tensor, and what each transition
between them costs."""

import numpy as np

from cipherpack import HeContext, KernelSpec, SchemeParams
from cipherpack.packing import (
    channels_to_dense,
    conv_unpack,
    dense_pack,
    h_grouping,
    h_grouping_from_dense,
    h_im2col_from_dense,
    plain_im2col,
)
from cipherpack.packing import ChannelPacked

params = SchemeParams(n_slots=64, t=65537)
rng = np.random.default_rng(0)
tensor = rng.integers(0, 10, size=(3, 3, 3))     # (channels, rows, cols)

print("a 3x3x3 tensor dense-packs into one ciphertext, channel blocks first:")
ctx = HeContext(params)
dp = dense_pack(tensor, ctx)
print(" ", dp.ct.slots[:27].tolist())

print("\nits patch matrix for a 2x2 kernel has 4 rows and 12 columns:")
cols = plain_im2col(tensor, KernelSpec(d=2))
print(cols)

print("\n== homomorphic patch rebuild (dense source, d=2) ==")
ctx = HeContext(params)
cp = h_im2col_from_dense(dense_pack(tensor, ctx), KernelSpec(d=2), ctx)
print("ciphertexts produced:", cp.k)
print("cost: masks =", ctx.counters.mul_pc,
      " rotations =", ctx.counters.rot,
      " additions =", ctx.counters.add_cc,
      " (one move per destination slot: 4 rows x 12 columns = 48)")
assert (conv_unpack(cp, ctx) == cols).all()

print("\n== 1x1 regrouping between column-packed layers is free ==")
ctx = HeContext(params)
chans = ChannelPacked(cts=tuple(ctx.encrypt(tensor[ch].reshape(-1))
                                for ch in range(3)), spatial=(3, 3))
before = ctx.counters.copy()
grouped = h_grouping(chans, KernelSpec(d=1))
print("ciphertexts:", grouped.k, " operations consumed:",
      (ctx.counters - before))

print("\n== 1x1 split out of a dense ciphertext ==")
ctx = HeContext(params)
h_grouping_from_dense(dense_pack(tensor, ctx), KernelSpec(d=1), ctx)
print("masks =", ctx.counters.mul_pc, " rotations =", ctx.counters.rot,
      " (channel 0 is already aligned)")

print("\n== combining channel blocks back into one dense vector ==")
ctx = HeContext(params)
chans = ChannelPacked(cts=tuple(ctx.encrypt(tensor[ch].reshape(-1))
                                for ch in range(3)), spatial=(3, 3))
channels_to_dense(chans, ctx)
print("3 blocks ->", ctx.counters.rot, "rotations and",
      ctx.counters.add_cc, "additions (first block needs none);")
print("54 blocks would need 53, 163 blocks 162.")
