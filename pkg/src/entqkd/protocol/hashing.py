"""Toeplitz (shift-register) universal hashing over GF(2)."""

from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve

# below this size a direct convolution is cheaper than an FFT
_DIRECT_LIMIT = 1 << 22


def toeplitz_hash(bits, seed_bits, m):
    """Multiply ``bits`` (length n) by the m x n Toeplitz matrix of ``seed_bits``.

    The matrix is T[i, j] = seed[i - j + n - 1], so ``seed_bits`` needs
    n + m - 1 entries. Returns m bits as uint8.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    seed_bits = np.asarray(seed_bits, dtype=np.uint8)
    n = bits.size
    if m <= 0 or n == 0:
        return np.zeros(max(m, 0), dtype=np.uint8)
    if seed_bits.size != n + m - 1:
        raise ValueError(f"seed must hold n + m - 1 = {n + m - 1} bits, got {seed_bits.size}")
    if n * (n + m) <= _DIRECT_LIMIT:
        full = np.convolve(seed_bits.astype(np.int64), bits.astype(np.int64))
    else:
        # counts stay far below 2**52, so rounding the float result is exact
        full = np.rint(fftconvolve(seed_bits.astype(np.float64), bits.astype(np.float64))).astype(np.int64)
    return (full[n - 1:n - 1 + m] & 1).astype(np.uint8)


def seeded_bits(seed, count):
    """Public random bits drawn from ``seed``."""
    return np.random.default_rng(seed).integers(0, 2, size=count, dtype=np.uint8)


def hash64(bits, seed):
    """64-bit Toeplitz digest of ``bits`` keyed by an integer seed."""
    bits = np.asarray(bits, dtype=np.uint8)
    out = toeplitz_hash(bits, seeded_bits(seed, bits.size + 63), 64) if bits.size else np.zeros(64, np.uint8)
    return int.from_bytes(np.packbits(out).tobytes(), "little")
