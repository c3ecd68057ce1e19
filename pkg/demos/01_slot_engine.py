"""Tour of the slot engine: packed ciphertexts, rotation, and the
rotate-and-sum reduction, with the operation counters on display."""

import numpy as np

from cipherpack import HeContext, SchemeParams

params = SchemeParams(n_slots=8, t=97)
ctx = HeContext(params)

print("== encrypt / decrypt ==")
ct = ctx.encrypt([1, -2, 3])
print("slots (residues mod 97):", ct.slots.tolist())
print("decrypted (centered):   ", ctx.decrypt(ct).tolist())

print("\n== rotation is a cyclic shift ==")
ct = ctx.encrypt([10, 11, 12, 13, 14, 15, 16, 17])
print("rotate by 3:", ctx.rotate(ct, 3).slots.tolist())
print("rotations so far:", ctx.counters.rot)

print("\n== slot-wise multiply and add ==")
a = ctx.encrypt([1, 2, 3, 4])
b = ctx.mul_plain(a, ctx.encode([5, 5, 5, 5]))
c = ctx.add_cc(b, ctx.encrypt([1, 1, 1, 1]))
print("(x * 5) + 1 =", ctx.decrypt(c)[:4].tolist())
print("depth consumed:", c.depth, "(multiplies only; adds are free)")

print("\n== rotate-and-sum: a dot product's reduction tree ==")
ctx = HeContext(params)
x = ctx.encrypt([3, 1, 4, 1, 5, 9, 2, 6])
total = ctx.rotate_and_sum(x, 8)
print("sum of 8 slots lands in slot 0:", int(ctx.decrypt(total)[0]))
print("cost: rotations =", ctx.counters.rot, " additions =", ctx.counters.add_cc,
      " (= ceil(log2 8) each)")

print("\n== the same reduction at CIFAR scale ==")
ctx = HeContext(SchemeParams(n_slots=16384, t=65537))
payload = ctx.encrypt(np.ones(16268, dtype=np.int64))
ctx.rotate_and_sum(payload, 16268)
print("one 16268-slot reduction needs", ctx.counters.rot, "rotations;")
print("500 of them (one per output of a rank-20 6x6 stage) need",
      500 * ctx.counters.rot)
