# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled ECA kernels. Same contract as ``_pure``."""

import numpy as np

ctypedef unsigned long long u64
ctypedef long long i64


cdef inline u64 _step(u64 s, u64 rule, int width, int radius) nogil:
    cdef int arity = 2 * radius + 1
    cdef u64 window_mask = (<u64>1 << arity) - 1
    cdef u64 idx = 0
    cdef u64 out = 0
    cdef int j, w
    # window for cell 0 covers cells -radius..radius
    for j in range(-radius, radius + 1):
        idx = (idx << 1) | ((s >> ((j + width) % width)) & 1)
    for w in range(width):
        out |= ((rule >> idx) & 1) << w
        idx = ((idx << 1) & window_mask) | ((s >> ((w + radius + 1) % width)) & 1)
    return out


def evolve(rules, initial, int width, int radius, int steps):
    cdef const u64[::1] rv = np.ascontiguousarray(rules, dtype=np.uint64)
    cdef const u64[::1] iv = np.ascontiguousarray(initial, dtype=np.uint64)
    cdef Py_ssize_t n = iv.shape[0]
    result = np.empty((n, steps), dtype=np.uint64)
    cdef u64[:, ::1] out = result
    cdef Py_ssize_t i
    cdef int t
    cdef u64 s
    with nogil:
        for i in range(n):
            s = iv[i]
            for t in range(steps):
                out[i, t] = s
                if t + 1 < steps:
                    s = _step(s, rv[i], width, radius)
    return result


cdef inline void _indices(u64 s, int width, int radius, i64* dst) nogil:
    cdef int arity = 2 * radius + 1
    cdef u64 window_mask = (<u64>1 << arity) - 1
    cdef u64 idx = 0
    cdef int j, w
    for j in range(-radius, radius + 1):
        idx = (idx << 1) | ((s >> ((j + width) % width)) & 1)
    for w in range(width):
        dst[w] = <i64>idx
        idx = ((idx << 1) & window_mask) | ((s >> ((w + radius + 1) % width)) & 1)


def neighborhood_indices(rows, int width, int radius):
    arr = np.ascontiguousarray(rows, dtype=np.uint64)
    shape = arr.shape
    cdef const u64[::1] flat = arr.reshape(-1)
    result = np.empty((flat.shape[0], width), dtype=np.int64)
    cdef i64[:, ::1] out = result
    cdef Py_ssize_t i
    with nogil:
        for i in range(flat.shape[0]):
            _indices(flat[i], width, radius, &out[i, 0])
    return result.reshape(shape + (width,))


def presence_masks(rows, int width, int radius):
    arr = np.ascontiguousarray(rows, dtype=np.uint64)
    shape = arr.shape
    cdef const u64[::1] flat = arr.reshape(-1)
    result = np.empty(flat.shape[0], dtype=np.uint64)
    cdef u64[::1] out = result
    cdef i64 buf[64]
    cdef Py_ssize_t i
    cdef int w
    cdef u64 m
    with nogil:
        for i in range(flat.shape[0]):
            _indices(flat[i], width, radius, buf)
            m = 0
            for w in range(width):
                m |= (<u64>1) << buf[w]
            out[i] = m
    return result.reshape(shape)


def tally(rows, int width, int radius):
    cdef const u64[::1] rv = np.ascontiguousarray(rows, dtype=np.uint64)
    cdef int size = 1 << (2 * radius + 1)
    counts_arr = np.zeros(size, dtype=np.int64)
    ones_arr = np.zeros(size, dtype=np.int64)
    cdef i64[::1] counts = counts_arr
    cdef i64[::1] ones = ones_arr
    cdef i64 buf[64]
    cdef Py_ssize_t t
    cdef int w
    with nogil:
        for t in range(rv.shape[0] - 1):
            _indices(rv[t], width, radius, buf)
            for w in range(width):
                counts[buf[w]] += 1
                ones[buf[w]] += (rv[t + 1] >> w) & 1
    return counts_arr, ones_arr
