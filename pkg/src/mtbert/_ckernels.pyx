# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Same signatures as mtbert._pykernels."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, INFINITY

cnp.import_array()


def binary_search_perplexity(double[:, ::1] sqdist, double perplexity, double tol=1e-5,
                             int max_steps=200):
    cdef Py_ssize_t n = sqdist.shape[0]
    cdef Py_ssize_t i, j, step
    cdef double beta, lo, hi, s, sd, H, diff, dmin, w
    P_arr = np.zeros((n, n), dtype=np.float64)
    betas_arr = np.ones(n, dtype=np.float64)
    cdef double[:, ::1] P = P_arr
    cdef double[::1] betas = betas_arr
    cdef double[::1] d = np.empty(n, dtype=np.float64)
    with nogil:
        for i in range(n):
            dmin = INFINITY
            for j in range(n):
                if j != i and sqdist[i, j] < dmin:
                    dmin = sqdist[i, j]
            for j in range(n):
                d[j] = sqdist[i, j] - dmin
            beta = 1.0
            lo = 0.0
            hi = INFINITY
            for step in range(max_steps):
                s = 0.0
                sd = 0.0
                for j in range(n):
                    if j != i:
                        w = exp(-beta * d[j])
                        P[i, j] = w
                        s = s + w
                        sd = sd + d[j] * w
                H = log(s) + beta * sd / s
                diff = exp(H) - perplexity
                if fabs(diff) <= tol:
                    break
                if diff > 0:
                    lo = beta
                    if hi == INFINITY:
                        beta = beta * 2.0
                    else:
                        beta = 0.5 * (beta + hi)
                else:
                    hi = beta
                    beta = 0.5 * (beta + lo)
            for j in range(n):
                if j != i:
                    P[i, j] = P[i, j] / s
            betas[i] = beta
    return P_arr, betas_arr


def tsne_kl_grad(double[:, ::1] Y, double[:, ::1] P):
    cdef Py_ssize_t n = Y.shape[0]
    cdef Py_ssize_t dim = Y.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double dist, z = 0.0, q, pq, kl = 0.0, diff
    num_arr = np.zeros((n, n), dtype=np.float64)
    grad_arr = np.zeros((n, dim), dtype=np.float64)
    cdef double[:, ::1] num = num_arr
    cdef double[:, ::1] grad = grad_arr
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                dist = 0.0
                for k in range(dim):
                    diff = Y[i, k] - Y[j, k]
                    dist = dist + diff * diff
                q = 1.0 / (1.0 + dist)
                num[i, j] = q
                num[j, i] = q
                z = z + 2.0 * q
        for i in range(n):
            for j in range(n):
                if j == i:
                    continue
                q = num[i, j] / z
                if q < 1e-300:
                    q = 1e-300
                if P[i, j] > 0:
                    kl = kl + P[i, j] * log(P[i, j] / q)
                pq = (P[i, j] - q) * num[i, j]
                for k in range(dim):
                    grad[i, k] = grad[i, k] + 4.0 * pq * (Y[i, k] - Y[j, k])
    return kl, grad_arr


def pcgrad_project(double[:, ::1] G, long[:, ::1] order):
    cdef Py_ssize_t m = G.shape[0]
    cdef Py_ssize_t d = G.shape[1]
    cdef Py_ssize_t i, jj, j, k
    cdef double dot, c
    cdef long skips = 0
    out_arr = np.array(G, copy=True)
    cdef double[:, ::1] out = out_arr
    norms_arr = np.zeros(m, dtype=np.float64)
    cdef double[::1] norms = norms_arr
    with nogil:
        for i in range(m):
            for k in range(d):
                norms[i] = norms[i] + G[i, k] * G[i, k]
        for i in range(m):
            for jj in range(order.shape[1]):
                j = order[i, jj]
                if norms[j] == 0.0:
                    skips += 1
                    continue
                dot = 0.0
                for k in range(d):
                    dot = dot + out[i, k] * G[j, k]
                if dot < 0.0:
                    c = dot / norms[j]
                    for k in range(d):
                        out[i, k] = out[i, k] - c * G[j, k]
    return out_arr, skips
