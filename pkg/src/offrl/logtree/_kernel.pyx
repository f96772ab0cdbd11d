# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the log-space sampling tree.

The scalar log-add follows the exact branch structure of numpy's logaddexp,
so trees touched by these kernels and by the numpy fallback stay bitwise
interchangeable.
"""

import numpy as np

from libc.math cimport exp, log, log1p, INFINITY

cdef double LN2 = 0.6931471805599453


cdef inline double lse2(double a, double b) noexcept nogil:
    # equal values (including two -inf children) short-circuit to a + ln 2
    if a == b:
        return a + LN2
    cdef double m, d
    if a > b:
        m = a
        d = b - a
    else:
        m = b
        d = a - b
    return m + log1p(exp(d))


def update(double[::1] nodes, Py_ssize_t leaf_base, Py_ssize_t index, double value):
    """Write one leaf and recompute its ancestors; returns the node write count."""
    cdef Py_ssize_t p = leaf_base + index
    cdef Py_ssize_t writes = 1
    nodes[p] = value
    p >>= 1
    while p >= 1:
        nodes[p] = lse2(nodes[2 * p], nodes[2 * p + 1])
        writes += 1
        p >>= 1
    return writes


cdef void _recompute(double[::1] nodes, long long[::1] targets) noexcept nogil:
    cdef Py_ssize_t i, p
    for i in range(targets.shape[0]):
        p = targets[i]
        nodes[p] = lse2(nodes[2 * p], nodes[2 * p + 1])


def update_many(double[::1] nodes, Py_ssize_t leaf_base,
                long long[::1] indices, double[::1] values):
    """Write several leaves, then repair affected ancestors level by level
    (each shared ancestor recomputed exactly once, reading its children, so
    the final values match a sequence of single-leaf updates)."""
    cdef Py_ssize_t i
    cdef Py_ssize_t n = indices.shape[0]
    for i in range(n):
        nodes[leaf_base + indices[i]] = values[i]
    level = np.unique((leaf_base + np.asarray(indices)) >> 1)
    while level.size and level[0] >= 1:
        _recompute(nodes, level)
        level = np.unique(level >> 1)


def build(double[::1] nodes, Py_ssize_t leaf_base):
    """Recompute every interior node from the leaves, bottom-up."""
    cdef Py_ssize_t p
    for p in range(leaf_base - 1, 0, -1):
        nodes[p] = lse2(nodes[2 * p], nodes[2 * p + 1])


cdef inline Py_ssize_t descend(double[::1] nodes, Py_ssize_t leaf_base,
                               double r) noexcept nogil:
    cdef Py_ssize_t p = 1
    cdef double lv
    while p < leaf_base:
        lv = nodes[2 * p]
        if nodes[2 * p + 1] == -INFINITY:
            # dead right subtree: forced left, clamping any rounding overshoot
            p = 2 * p
        elif r < lv:
            p = 2 * p
        else:
            # log-space analogue of r -= left_mass; skip when the left
            # subtree is empty (r is unchanged, and -inf - -inf is NaN)
            if lv != -INFINITY:
                r = r + log1p(-exp(lv - r))
            p = 2 * p + 1
    return p - leaf_base


def sample(double[::1] nodes, Py_ssize_t leaf_base, double u):
    """Map u in [0, 1) to a leaf index with probability exp(leaf - root)."""
    cdef double r
    if u > 0.0:
        r = log(u) + nodes[1]
    else:
        r = -INFINITY
    return descend(nodes, leaf_base, r)


def sample_many(double[::1] nodes, Py_ssize_t leaf_base,
                double[::1] us, long long[::1] out):
    """Vector version of sample(); fills out[i] for each us[i]."""
    cdef Py_ssize_t i
    cdef double u, r
    for i in range(us.shape[0]):
        u = us[i]
        if u > 0.0:
            r = log(u) + nodes[1]
        else:
            r = -INFINITY
        out[i] = descend(nodes, leaf_base, r)
