"""Privacy amplification by seeded Toeplitz hashing."""

from __future__ import annotations

import math
import struct

import numpy as np

from ..keyrate import binary_entropy
from .hashing import seeded_bits, toeplitz_hash

_PA = struct.Struct("<QI")


def secure_length(n, qber, f, leaked_bits=0):
    """Asymptotic secure length n(1 - H2(q)) - max(n f H2(q), leaked_bits), floored at 0."""
    if n <= 0:
        return 0
    h = float(binary_entropy(min(max(qber, 0.0), 0.5)))
    ec = max(n * f * h, float(leaked_bits))
    return max(0, int(math.floor(n * (1.0 - h) - ec + 1e-9)))


def toeplitz_from_payload(key, payload):
    seed, m = _PA.unpack(payload)
    key = np.asarray(key, dtype=np.uint8)
    if m == 0 or key.size == 0:
        return np.zeros(0, dtype=np.uint8)
    return toeplitz_hash(key, seeded_bits(seed, key.size + m - 1), m)


def pa_payload(seed, m):
    return _PA.pack(int(seed), int(m))


def privacy_amplify(key, qber, f, leaked_bits, rng_seed):
    """Compress ``key`` to its secure length.

    The length follows the asymptotic bound with the error-correction term
    taken as the larger of f n H2(q) and the bits actually disclosed.
    Returns an empty array when nothing survives.
    """
    key = np.asarray(getattr(key, "bits", key), dtype=np.uint8)
    if key.size == 0:
        raise ValueError("key is empty")
    m = secure_length(key.size, qber, f, leaked_bits)
    return toeplitz_from_payload(key, pa_payload(rng_seed, m))
