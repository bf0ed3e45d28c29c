# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Must stay bit-identical to ``_kernels_py``.

Built with -ffp-contract=off: a fused multiply-add would skip the binary32
rounding of each product.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport copysign, frexp, ldexp, rint, isnan, isinf, INFINITY, NAN
from libc.stdint cimport int64_t, uint32_t

cnp.import_array()


cdef inline uint32_t _encode_one(double v, int exp_bits, int man_bits) noexcept nogil:
    cdef int bias = (1 << (exp_bits - 1)) - 1
    cdef int64_t exp_max = (1 << exp_bits) - 1
    cdef int emin = 1 - bias
    cdef int64_t inf_mag = exp_max << man_bits
    cdef uint32_t sign = 0
    cdef double a
    cdef int e
    cdef int64_t scale, n, mag
    if copysign(1.0, v) < 0:
        sign = 1
    a = -v if sign else v
    if isnan(v):
        mag = inf_mag | (1 << (man_bits - 1))
    elif isinf(a):
        mag = inf_mag
    elif a == 0.0:
        mag = 0
    else:
        frexp(a, &e)
        scale = e - 1
        if scale < emin:
            scale = emin
        n = <int64_t>rint(ldexp(a, <int>(man_bits - scale)))
        mag = ((scale + bias - 1) << man_bits) + n
        if mag >= inf_mag:
            mag = inf_mag
    return (sign << (exp_bits + man_bits)) | <uint32_t>mag


cdef inline double _decode_one(uint32_t bits, int exp_bits, int man_bits) noexcept nogil:
    cdef int bias = (1 << (exp_bits - 1)) - 1
    cdef uint32_t exp_max = (1 << exp_bits) - 1
    cdef uint32_t man = bits & ((1 << man_bits) - 1)
    cdef uint32_t exp = (bits >> man_bits) & exp_max
    cdef bint neg = (bits >> (exp_bits + man_bits)) & 1
    cdef double out
    if exp == 0:
        out = ldexp(<double>man, 1 - bias - man_bits)
    elif exp == exp_max:
        out = INFINITY if man == 0 else NAN
    else:
        out = ldexp(<double>(man + (1 << man_bits)), <int>exp - bias - man_bits)
    return -out if neg else out


def encode_bits(values, int exp_bits, int man_bits):
    v = np.ascontiguousarray(values, dtype=np.float64)
    out = np.empty(v.shape, dtype=np.uint32)
    cdef const double[::1] src = v.reshape(-1)
    cdef uint32_t[::1] dst = out.reshape(-1)
    cdef Py_ssize_t i
    with nogil:
        for i in range(src.shape[0]):
            dst[i] = _encode_one(src[i], exp_bits, man_bits)
    return out


def decode_bits(bits, int exp_bits, int man_bits):
    b = np.ascontiguousarray(bits, dtype=np.uint32)
    out = np.empty(b.shape, dtype=np.float64)
    cdef const uint32_t[::1] src = b.reshape(-1)
    cdef double[::1] dst = out.reshape(-1)
    cdef Py_ssize_t i
    with nogil:
        for i in range(src.shape[0]):
            dst[i] = _decode_one(src[i], exp_bits, man_bits)
    return out


def gemm_f32(a, b, c):
    """D = C + sum_k A[:, k] * B[k, :], ascending k, binary32 throughout."""
    cdef const float[:, ::1] A = np.ascontiguousarray(a, dtype=np.float32)
    cdef const float[:, ::1] B = np.ascontiguousarray(b, dtype=np.float32)
    out = np.array(c, dtype=np.float32, order="C", copy=True)
    cdef float[:, ::1] D = out
    cdef Py_ssize_t M = A.shape[0], K = A.shape[1], N = B.shape[1]
    cdef Py_ssize_t i, j, kk
    cdef float aik, p
    if B.shape[0] != K or D.shape[0] != M or D.shape[1] != N:
        raise ValueError("gemm_f32: shape mismatch")
    with nogil:
        for i in range(M):
            for kk in range(K):
                aik = A[i, kk]
                for j in range(N):
                    p = aik * B[kk, j]
                    D[i, j] = D[i, j] + p
    return out


def accumulate_f32(init, terms):
    cdef const float[:, ::1] T = np.ascontiguousarray(terms, dtype=np.float32)
    out = np.array(init, dtype=np.float32, order="C", copy=True)
    cdef float[::1] acc = out
    cdef Py_ssize_t P = T.shape[0], K = T.shape[1], i, kk
    if acc.shape[0] != P:
        raise ValueError("accumulate_f32: shape mismatch")
    with nogil:
        for i in range(P):
            for kk in range(K):
                acc[i] = acc[i] + T[i, kk]
    return out
