# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint8_t, uint32_t, uint64_t, int32_t, int64_t

cnp.import_array()

cdef uint64_t FNV_OFFSET = 0xCBF29CE484222325ULL
cdef uint64_t FNV_PRIME = 0x100000001B3ULL


cdef inline uint64_t _fnv_bytes(uint64_t h, const uint8_t* p, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(n):
        h ^= p[i]
        h *= FNV_PRIME
    return h


cdef inline uint64_t _fnv_i32(uint64_t h, int32_t v) noexcept nogil:
    # little-endian byte order, independent of host endianness
    cdef uint32_t u = <uint32_t> v
    cdef int k
    for k in range(4):
        h ^= (u >> (8 * k)) & 0xFF
        h *= FNV_PRIME
    return h


cdef inline uint64_t _fnv_u64(uint64_t h, uint64_t v) noexcept nogil:
    cdef int k
    for k in range(8):
        h ^= (v >> (8 * k)) & 0xFF
        h *= FNV_PRIME
    return h



def fnv1a64(bytes data, seed=None):
    cdef uint64_t h = FNV_OFFSET if seed is None else <uint64_t> seed
    cdef const uint8_t* p = <const uint8_t*> data
    return _fnv_bytes(h, p, len(data))


def atom_hashes(props):
    cdef int64_t[:, ::1] P = np.ascontiguousarray(props, dtype=np.int64)
    cdef Py_ssize_t n = P.shape[0], k = P.shape[1], i, j
    out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] O = out
    cdef uint64_t h
    with nogil:
        for i in range(n):
            h = FNV_OFFSET
            for j in range(k):
                h = _fnv_i32(h, <int32_t> P[i, j])
            O[i] = h
    return out


def morgan_environments(init, indptr, nbrs, orders, int radius):
    cdef uint64_t[::1] I0 = np.ascontiguousarray(init, dtype=np.uint64)
    cdef int64_t[::1] IP = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef int64_t[::1] NB = np.ascontiguousarray(nbrs, dtype=np.int64)
    cdef int64_t[::1] OR = np.ascontiguousarray(orders, dtype=np.int64)
    cdef Py_ssize_t n = I0.shape[0], a, e, s, t, cnt, r
    out = np.empty(n * (radius + 1), dtype=np.uint64)
    cdef uint64_t[::1] O = out
    max_deg = 0
    for a in range(n):
        if IP[a + 1] - IP[a] > max_deg:
            max_deg = IP[a + 1] - IP[a]
    cdef int64_t[::1] po = np.empty(max(max_deg, 1), dtype=np.int64)
    cdef uint64_t[::1] pv = np.empty(max(max_deg, 1), dtype=np.uint64)
    cdef int64_t to
    cdef uint64_t tv, h
    for a in range(n):
        O[a] = I0[a]
    with nogil:
        for r in range(1, radius + 1):
            for a in range(n):
                cnt = 0
                for e in range(IP[a], IP[a + 1]):
                    to = OR[e]
                    tv = O[(r - 1) * n + NB[e]]
                    # insertion sort by (order, invariant)
                    s = cnt
                    while s > 0 and (po[s - 1] > to or (po[s - 1] == to and pv[s - 1] > tv)):
                        po[s] = po[s - 1]
                        pv[s] = pv[s - 1]
                        s -= 1
                    po[s] = to
                    pv[s] = tv
                    cnt += 1
                h = _fnv_i32(FNV_OFFSET, <int32_t> r)
                h = _fnv_u64(h, O[(r - 1) * n + a])
                for t in range(cnt):
                    h = _fnv_i32(h, <int32_t> po[t])
                    h = _fnv_u64(h, pv[t])
                O[r * n + a] = h
    return out


def fold_bits(invariants, int nbits):
    cdef uint64_t[::1] V = np.ascontiguousarray(invariants, dtype=np.uint64)
    words = np.zeros(nbits // 64, dtype=np.uint64)
    cdef uint64_t[::1] W = words
    cdef Py_ssize_t i
    cdef uint64_t bit
    with nogil:
        for i in range(V.shape[0]):
            bit = V[i] % <uint64_t> nbits
            W[bit >> 6] |= (<uint64_t> 1) << (bit & 63)
    return words


cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


cdef inline int _popcount(uint64_t x) noexcept nogil:
    return __builtin_popcountll(x)


def tanimoto_words(a, b):
    cdef uint64_t[::1] A = np.ascontiguousarray(a, dtype=np.uint64)
    cdef uint64_t[::1] B = np.ascontiguousarray(b, dtype=np.uint64)
    cdef Py_ssize_t i
    cdef long inter = 0, union = 0
    for i in range(A.shape[0]):
        inter += _popcount(A[i] & B[i])
        union += _popcount(A[i] | B[i])
    if union == 0:
        return 1.0
    return <double> inter / <double> union


def max_tanimoto(queries, refs):
    cdef uint64_t[:, ::1] Q = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.uint64)
    cdef uint64_t[:, ::1] R = np.ascontiguousarray(np.atleast_2d(refs), dtype=np.uint64)
    cdef Py_ssize_t nq = Q.shape[0], nr = R.shape[0], w = Q.shape[1], q, r, i
    out = np.empty(nq, dtype=np.float64)
    cdef double[::1] O = out
    cdef long inter, union
    cdef double best, sim
    with nogil:
        for q in range(nq):
            best = -1.0
            for r in range(nr):
                inter = 0
                union = 0
                for i in range(w):
                    inter += _popcount(Q[q, i] & R[r, i])
                    union += _popcount(Q[q, i] | R[r, i])
                sim = 1.0 if union == 0 else <double> inter / <double> union
                if sim > best:
                    best = sim
            O[q] = best
    return out


def scatter_add_rows(src, index, Py_ssize_t n_out):
    src_arr = np.ascontiguousarray(src, dtype=np.float64)
    flat = src_arr.reshape(src_arr.shape[0], int(np.prod(src_arr.shape[1:])))
    cdef double[:, ::1] S = flat
    cdef int64_t[::1] IX = np.ascontiguousarray(index, dtype=np.int64)
    out = np.zeros((n_out, flat.shape[1]), dtype=np.float64)
    cdef double[:, ::1] O = out
    cdef Py_ssize_t n = S.shape[0], d = S.shape[1], i, j, t
    for i in range(n):
        if IX[i] < 0 or IX[i] >= n_out:
            raise IndexError(f"index {IX[i]} out of range for {n_out} rows")
    with nogil:
        for i in range(n):
            t = IX[i]
            for j in range(d):
                O[t, j] += S[i, j]
    return out.reshape((n_out,) + src_arr.shape[1:])
