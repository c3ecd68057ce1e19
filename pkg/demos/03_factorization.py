"""Low-rank factorization of a convolution's weight matrix: optimal
truncation, rank search against an error budget, and 8-bit quantization
of the factors."""

import numpy as np

from cipherpack import (
    quantize_factors,
    rank_search,
    reconstruction_error,
    truncated_svd,
    weights_to_matrix,
)

rng = np.random.default_rng(7)

# a 6x6 convolution with 83 input channels and 163 filters, as a matrix
w4d = rng.normal(size=(6, 6, 83, 163)) * 0.1
w = weights_to_matrix(w4d)
print(f"weight matrix: {w.shape[0]} x {w.shape[1]} (K x O_c)")

norm = np.linalg.norm(w)
print("\nrelative reconstruction error by rank:")
for rank in (5, 10, 20, 40, 80, 163):
    err = reconstruction_error(w, truncated_svd(w, rank)) / norm
    print(f"  rank {rank:3d}: {err:.4f}")

print("\nsmallest rank meeting a relative error budget:")
for budget in (0.5, 0.2, 0.1, 0.01, 0.0):
    print(f"  budget {budget:4.2f} -> rank {rank_search(w, budget)}")

print("\nquantizing the rank-20 factors to 8 bits:")
pair = truncated_svd(w, 20)
q = quantize_factors(pair, bits=8)
print(f"  left factor  {q.w1.shape}, integer range "
      f"[{q.w1.min()}, {q.w1.max()}], scale {q.scale1:.3e}")
print(f"  right factor {q.w2.shape}, integer range "
      f"[{q.w2.min()}, {q.w2.max()}], scale {q.scale2:.3e}")
quant_err = reconstruction_error(w, q) / norm
float_err = reconstruction_error(w, pair) / norm
print(f"  relative error: {float_err:.4f} (real factors) -> "
      f"{quant_err:.4f} (quantized)")
