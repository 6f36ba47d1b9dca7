# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled policy-network kernels.

Semantics match `_pykernels.py`; keep the two files in sync. Small dense
shapes (hidden ~64, a handful of candidate actions) make per-call numpy
dispatch the bottleneck, hence plain C loops instead of BLAS.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()

BACKEND = "c"


def policy_forward(double[:, ::1] w1, double[::1] b1,
                   double[:, ::1] w2, double[::1] b2,
                   double[::1] state, double[:, ::1] feats):
    cdef Py_ssize_t h = w1.shape[0]
    cdef Py_ssize_t ds = w1.shape[1]
    cdef Py_ssize_t da = w2.shape[0]
    cdef Py_ssize_t n = feats.shape[0]
    cdef Py_ssize_t i, j

    hidden_arr = np.empty(h, dtype=np.float64)
    head_arr = np.empty(da, dtype=np.float64)
    probs_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] hidden = hidden_arr
    cdef double[::1] head = head_arr
    cdef double[::1] probs = probs_arr
    cdef double acc, mx, total

    for i in range(h):
        acc = b1[i]
        for j in range(ds):
            acc += w1[i, j] * state[j]
        hidden[i] = tanh(acc)
    for i in range(da):
        acc = b2[i]
        for j in range(h):
            acc += w2[i, j] * hidden[j]
        head[i] = acc

    mx = -1e300
    for i in range(n):
        acc = 0.0
        for j in range(da):
            acc += feats[i, j] * head[j]
        probs[i] = acc
        if acc > mx:
            mx = acc
    total = 0.0
    for i in range(n):
        probs[i] = exp(probs[i] - mx)
        total += probs[i]
    for i in range(n):
        probs[i] /= total

    return probs_arr, hidden_arr, head_arr


def logprob_grad(double[:, ::1] w1, double[:, ::1] w2,
                 double[::1] state, double[:, ::1] feats,
                 double[::1] hidden, double[::1] probs,
                 Py_ssize_t chosen, double coeff,
                 double[:, ::1] gw1, double[::1] gb1,
                 double[:, ::1] gw2, double[::1] gb2):
    cdef Py_ssize_t h = w1.shape[0]
    cdef Py_ssize_t ds = w1.shape[1]
    cdef Py_ssize_t da = w2.shape[0]
    cdef Py_ssize_t n = feats.shape[0]
    cdef Py_ssize_t i, j

    g_head_arr = np.empty(da, dtype=np.float64)
    cdef double[::1] g_head = g_head_arr
    cdef double acc, gz

    for j in range(da):
        acc = 0.0
        for i in range(n):
            acc += probs[i] * feats[i, j]
        g_head[j] = coeff * (feats[chosen, j] - acc)

    for j in range(da):
        gb2[j] += g_head[j]
        for i in range(h):
            gw2[j, i] += g_head[j] * hidden[i]

    for i in range(h):
        acc = 0.0
        for j in range(da):
            acc += w2[j, i] * g_head[j]
        gz = acc * (1.0 - hidden[i] * hidden[i])
        gb1[i] += gz
        for j in range(ds):
            gw1[i, j] += gz * state[j]
