# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Must agree bit-for-bit with ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t

cnp.import_array()


def sequence_logprobs(const double[:, ::1] logp, const int64_t[::1] context,
                      const int64_t[::1] tokens, const int64_t[::1] offsets):
    cdef Py_ssize_t n_seq = offsets.shape[0] - 1
    out_arr = np.zeros(n_seq, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef int64_t prev, tok
    cdef double acc
    for i in range(n_seq):
        prev = context[i]
        acc = 0.0
        for j in range(offsets[i], offsets[i + 1]):
            tok = tokens[j]
            acc += logp[prev, tok]
            prev = tok
        out[i] = acc
    return out_arr


def scatter_bigram(const double[::1] weights, const int64_t[::1] context,
                   const int64_t[::1] tokens, const int64_t[::1] offsets,
                   double[:, ::1] out, double[::1] rowmass):
    cdef Py_ssize_t n_seq = offsets.shape[0] - 1
    cdef Py_ssize_t i, j
    cdef int64_t prev, tok
    cdef double w
    for i in range(n_seq):
        w = weights[i]
        prev = context[i]
        for j in range(offsets[i], offsets[i + 1]):
            tok = tokens[j]
            out[prev, tok] += w
            rowmass[prev] += w
            prev = tok


cdef inline bint _same(const int64_t[::1] ids, Py_ssize_t a, Py_ssize_t b, int n) nogil:
    cdef int k
    for k in range(n):
        if ids[a + k] != ids[b + k]:
            return False
    return True


def max_ngram_count(const int64_t[::1] ids, int n):
    if n < 1:
        raise ValueError("n must be >= 1")
    cdef Py_ssize_t m = ids.shape[0] - n + 1
    if m <= 0:
        return 0
    cdef Py_ssize_t cap = 1
    while cap < 2 * m:
        cap <<= 1
    start_arr = np.full(cap, -1, dtype=np.int64)
    count_arr = np.zeros(cap, dtype=np.int64)
    cdef int64_t[::1] start = start_arr
    cdef int64_t[::1] count = count_arr
    cdef uint64_t h
    cdef uint64_t mask = <uint64_t>(cap - 1)
    cdef Py_ssize_t i, slot
    cdef int k
    cdef int64_t best = 0
    for i in range(m):
        h = 1469598103934665603ULL
        for k in range(n):
            h = (h ^ <uint64_t>ids[i + k]) * 1099511628211ULL
        slot = <Py_ssize_t>(h & mask)
        while True:
            if start[slot] == -1:
                start[slot] = i
                count[slot] = 1
                if best < 1:
                    best = 1
                break
            if _same(ids, start[slot], i, n):
                count[slot] += 1
                if count[slot] > best:
                    best = count[slot]
                break
            slot = (slot + 1) & <Py_ssize_t>mask
    return int(best)
