"""Data-free low-rank factorization of convolution weight matrices.

A d x d convolution with O_c filters, written as a K x O_c weight matrix
(K = d*d*I_c), is approximated by the product of a K x r and an r x O_c
matrix.  The optimal rank-r pair in Frobenius norm comes from the
truncated singular value decomposition; as layers, the left factor is a
d x d convolution with r output channels and the right factor a 1 x 1
convolution restoring O_c channels.

Factor split: the singular values are folded entirely into the left
factor (w1 = U S, w2 = V^T), which keeps every entry of w2 in [-1, 1] and
therefore friendly to fixed-point quantization.  A balanced sqrt-S split
would work equally well for reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FactorizedPair:
    """Rank-r factors of a K x O_c weight matrix.

    Real-valued as produced by the factorization; after quantize_factors,
    entries are integers and the per-matrix scales are set.
    """

    w1: np.ndarray   # K x r
    w2: np.ndarray   # r x O_c
    rank: int
    scale1: float | None = None
    scale2: float | None = None
    bits: int | None = None

    @property
    def quantized(self) -> bool:
        return self.scale1 is not None

    def product(self) -> np.ndarray:
        return np.asarray(self.w1, dtype=np.float64) @ np.asarray(self.w2, dtype=np.float64)


def weights_to_matrix(w4d: np.ndarray) -> np.ndarray:
    """Flatten (d, d, I_c, O_c) filters into the K x O_c weight matrix.

    Column o lists filter o's parameters channel-major (ch, ky, kx), the
    same element order as the packed patch-matrix rows.
    """
    if w4d.ndim != 4:
        raise ValueError(f"expected a 4D filter tensor, got shape {w4d.shape}")
    d1, d2, ic, oc = w4d.shape
    if d1 != d2:
        raise ValueError(f"kernel must be square, got {d1}x{d2}")
    return w4d.transpose(2, 0, 1, 3).reshape(d1 * d2 * ic, oc)


def matrix_to_weights(w: np.ndarray, d: int, in_channels: int) -> np.ndarray:
    """Inverse of weights_to_matrix."""
    k, oc = w.shape
    if k != d * d * in_channels:
        raise ValueError(f"{k} rows cannot be a {d}x{d}x{in_channels} kernel")
    return w.reshape(in_channels, d, d, oc).transpose(1, 2, 0, 3)


def truncated_svd(w: np.ndarray, rank: int) -> FactorizedPair:
    """Best rank-r approximation of w under the Frobenius norm."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError("expected a 2D weight matrix")
    if not 1 <= rank <= min(w.shape):
        raise ValueError(f"rank must be in [1, {min(w.shape)}], got {rank}")
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    w1 = u[:, :rank] * s[:rank]
    w2 = vt[:rank, :]
    return FactorizedPair(w1=w1, w2=w2, rank=rank)


def reconstruction_error(w: np.ndarray, pair: FactorizedPair) -> float:
    """Frobenius norm of w - w1 w2 (dequantized factors if quantized)."""
    w = np.asarray(w, dtype=np.float64)
    approx = pair.product()
    if pair.quantized:
        approx = approx * (pair.scale1 * pair.scale2)
    if approx.shape != w.shape:
        raise ValueError(f"shape mismatch: {w.shape} vs {approx.shape}")
    return float(np.linalg.norm(w - approx))


def rank_search(w: np.ndarray, error_budget: float) -> int:
    """Smallest rank whose relative Frobenius error fits the budget."""
    if not 0 <= error_budget < 1:
        raise ValueError("error budget must be in [0, 1)")
    w = np.asarray(w, dtype=np.float64)
    s = np.linalg.svd(w, compute_uv=False)
    norm = float(np.linalg.norm(s))
    if norm == 0.0:
        return 1
    tail = np.sqrt(np.maximum(np.cumsum((s ** 2)[::-1])[::-1], 0.0))
    # tail[r] = error of keeping the first r singular values
    tail = np.append(tail[1:], 0.0)
    tol = 1e-12 * norm
    for r in range(1, len(s) + 1):
        if tail[r - 1] <= error_budget * norm + tol:
            return r
    return len(s)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_matrix(w: np.ndarray, bits: int) -> tuple[np.ndarray, float]:
    """Symmetric per-matrix uniform quantization to signed ``bits`` levels.

    Returns integer entries and the scale (real = int * scale).  An all-zero
    matrix quantizes with scale 1.
    """
    if bits < 2:
        raise ValueError("need at least 2 bits")
    w = np.asarray(w, dtype=np.float64)
    peak = float(np.max(np.abs(w))) if w.size else 0.0
    if peak == 0.0:
        return np.zeros_like(w, dtype=np.int64), 1.0
    scale = peak / (2 ** (bits - 1) - 1)
    return _round_half_away(w / scale).astype(np.int64), scale


def quantize_factors(pair: FactorizedPair, bits: int) -> FactorizedPair:
    """Quantize both factors independently (symmetric, per-matrix)."""
    q1, s1 = quantize_matrix(pair.w1, bits)
    q2, s2 = quantize_matrix(pair.w2, bits)
    return FactorizedPair(w1=q1, w2=q2, rank=pair.rank,
                          scale1=s1, scale2=s2, bits=bits)
