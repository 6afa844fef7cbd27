# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled attention kernels.

Fused multi-head attention forward/backward plus the attention-guidance
binary cross-entropy. Semantics match the numpy twin in
``neuroalign.model.backend_np``; at the small sequence lengths this package
trains at, the fused loops beat a chain of numpy calls by a wide margin
(see benchmarks/bench_attention.py).
"""

import numpy as np

from libc.math cimport exp, log, log1p, sqrt, INFINITY

cdef double BCE_EPS = 1e-12


def mha_forward(double[:, :, ::1] q, double[:, :, ::1] k, double[:, :, ::1] v,
                const unsigned char[::1] key_mask):
    cdef Py_ssize_t H = q.shape[0], P = q.shape[1], dk = q.shape[2]
    probs_arr = np.empty((H, P, P), dtype=np.float64)
    ctx_arr = np.empty((H, P, dk), dtype=np.float64)
    cdef double[:, :, ::1] probs = probs_arr
    cdef double[:, :, ::1] ctx = ctx_arr
    cdef double scale = 1.0 / sqrt(<double> dk)
    cdef Py_ssize_t h, i, j, t
    cdef double m, s, acc
    with nogil:
        for h in range(H):
            for i in range(P):
                m = -INFINITY
                for j in range(P):
                    if key_mask[j]:
                        acc = 0.0
                        for t in range(dk):
                            acc += q[h, i, t] * k[h, j, t]
                        acc *= scale
                        probs[h, i, j] = acc
                        if acc > m:
                            m = acc
                s = 0.0
                for j in range(P):
                    if key_mask[j]:
                        acc = exp(probs[h, i, j] - m)
                        probs[h, i, j] = acc
                        s += acc
                    else:
                        probs[h, i, j] = 0.0
                for j in range(P):
                    probs[h, i, j] /= s
                for t in range(dk):
                    acc = 0.0
                    for j in range(P):
                        acc += probs[h, i, j] * v[h, j, t]
                    ctx[h, i, t] = acc
    return probs_arr, ctx_arr


def mha_backward(double[:, :, ::1] q, double[:, :, ::1] k, double[:, :, ::1] v,
                 double[:, :, ::1] probs, double[:, :, ::1] d_ctx,
                 object d_probs, const unsigned char[::1] key_mask):
    cdef Py_ssize_t H = q.shape[0], P = q.shape[1], dk = q.shape[2]
    dq_arr = np.zeros((H, P, dk), dtype=np.float64)
    dk_arr = np.zeros((H, P, dk), dtype=np.float64)
    dv_arr = np.zeros((H, P, dk), dtype=np.float64)
    dp_arr = np.empty((H, P, P), dtype=np.float64)
    cdef double[:, :, ::1] dq = dq_arr, dkk = dk_arr, dv = dv_arr, dp = dp_arr
    cdef double[:, :, ::1] dpx
    cdef bint has_extra = d_probs is not None
    if has_extra:
        dpx = d_probs
    else:
        dpx = dp_arr  # unused
    cdef double scale = 1.0 / sqrt(<double> dk)
    cdef Py_ssize_t h, i, j, t
    cdef double row, acc, dsij
    with nogil:
        for h in range(H):
            for i in range(P):
                # dp = d_ctx @ v^T (+ extra), then softmax backward in place
                row = 0.0
                for j in range(P):
                    acc = 0.0
                    for t in range(dk):
                        acc += d_ctx[h, i, t] * v[h, j, t]
                    if has_extra:
                        acc += dpx[h, i, j]
                    dp[h, i, j] = acc
                    row += acc * probs[h, i, j]
                for j in range(P):
                    dsij = probs[h, i, j] * (dp[h, i, j] - row)
                    for t in range(dk):
                        dq[h, i, t] += dsij * k[h, j, t] * scale
                        dkk[h, j, t] += dsij * q[h, i, t] * scale
                        dv[h, j, t] += probs[h, i, j] * d_ctx[h, i, t]
    return dq_arr, dk_arr, dv_arr


def guidance_bce(double[:, :, ::1] probs, double[:, ::1] adj,
                 const unsigned char[::1] pair_mask):
    cdef Py_ssize_t H = probs.shape[0], P = probs.shape[1]
    d_arr = np.zeros((H, P, P), dtype=np.float64)
    cdef double[:, :, ::1] d_probs = d_arr
    cdef Py_ssize_t h, i, j
    cdef long n_pairs = 0
    for i in range(P):
        if pair_mask[i]:
            for j in range(P):
                if pair_mask[j] and i != j:
                    n_pairs += 1
    if n_pairs == 0:
        raise ValueError("no eligible pairs for the guidance loss")
    cdef double loss = 0.0
    cdef double inv_n = 1.0 / <double> n_pairs
    cdef double p, a
    with nogil:
        for h in range(H):
            for i in range(P):
                if not pair_mask[i]:
                    continue
                for j in range(P):
                    if i == j or not pair_mask[j]:
                        continue
                    a = adj[i, j]
                    p = probs[h, i, j]
                    if p < BCE_EPS:
                        p = BCE_EPS
                    elif p > 1.0 - BCE_EPS:
                        p = 1.0 - BCE_EPS
                    loss -= (a * log(p) + (1.0 - a) * log1p(-p)) * inv_n
                    if BCE_EPS < probs[h, i, j] < 1.0 - BCE_EPS:
                        d_probs[h, i, j] = (-a / p + (1.0 - a) / (1.0 - p)) * inv_n
    return loss, d_arr
