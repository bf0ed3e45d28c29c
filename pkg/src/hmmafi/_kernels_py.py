"""NumPy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable or disabled
(``HMMAFI_PURE_PYTHON=1``). Results are bit-identical to the extension.
"""

from __future__ import annotations

import numpy as np


def encode_bits(values, exp_bits: int, man_bits: int) -> np.ndarray:
    """Round binary64 values to nearest-even in a (1, exp_bits, man_bits) format."""
    v = np.asarray(values, dtype=np.float64)
    bias = (1 << (exp_bits - 1)) - 1
    exp_max = (1 << exp_bits) - 1
    emin = 1 - bias

    sign = np.signbit(v).astype(np.int64)
    a = np.abs(v)
    finite = np.isfinite(a)
    safe = np.where(finite, a, 0.0)
    _, e = np.frexp(safe)
    scale = np.maximum(e.astype(np.int64) - 1, emin)
    n = np.rint(np.ldexp(safe, -(scale - man_bits))).astype(np.int64)
    # carries from rounding propagate into the exponent field by plain addition
    mag = ((scale + bias - 1) << man_bits) + n
    mag = np.where(safe == 0.0, 0, mag)
    inf_mag = exp_max << man_bits
    mag = np.where(mag >= inf_mag, inf_mag, mag)
    mag = np.where(np.isinf(a), inf_mag, mag)
    mag = np.where(np.isnan(a), inf_mag | (1 << (man_bits - 1)), mag)
    return ((sign << (exp_bits + man_bits)) | mag).astype(np.uint32)


def decode_bits(bits, exp_bits: int, man_bits: int) -> np.ndarray:
    b = np.asarray(bits, dtype=np.int64)
    bias = (1 << (exp_bits - 1)) - 1
    exp_max = (1 << exp_bits) - 1
    man = b & ((1 << man_bits) - 1)
    exp = (b >> man_bits) & exp_max
    neg = ((b >> (exp_bits + man_bits)) & 1).astype(bool)

    normal = np.ldexp((man + (1 << man_bits)).astype(np.float64), exp - bias - man_bits)
    sub = np.ldexp(man.astype(np.float64), np.full_like(exp, 1 - bias - man_bits))
    out = np.where(exp == 0, sub, normal)
    out = np.where(exp == exp_max, np.where(man == 0, np.inf, np.nan), out)
    return np.where(neg, -out, out)


def gemm_f32(a, b, c) -> np.ndarray:
    """D = C + sum_k A[:, k] * B[k, :], one binary32 rounding per product and per add, ascending k."""
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    out = np.array(c, dtype=np.float32, copy=True)
    with np.errstate(all="ignore"):
        for kk in range(a.shape[1]):
            out += np.multiply.outer(a[:, kk], b[kk, :])
    return out


def accumulate_f32(init, terms) -> np.ndarray:
    """Sequential binary32 sum of ``terms`` along axis 1, starting from ``init``."""
    t = np.asarray(terms, dtype=np.float32)
    out = np.array(init, dtype=np.float32, copy=True)
    with np.errstate(all="ignore"):
        for kk in range(t.shape[1]):
            out += t[:, kk]
    return out
