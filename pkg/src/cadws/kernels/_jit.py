"""Numba kernels. Loop orders are fixed so results are bit-reproducible."""

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def matmul(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    # i-k-j order: every out[i, j] accumulates over k left to right.
    for i in range(n):
        for p in range(k):
            aip = a[i, p]
            for j in range(m):
                out[i, j] += aip * b[p, j]
    return out


@njit(cache=True, nogil=True)
def softmax_rows(x):
    n, m = x.shape
    out = np.empty((n, m))
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, m):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(m):
            e = math.exp(x[i, j] - mx)
            out[i, j] = e
            s += e
        for j in range(m):
            out[i, j] /= s
    return out


@njit(cache=True, nogil=True)
def softmax_rows_masked(x, mask):
    n, m = x.shape
    out = np.zeros((n, m))
    for i in range(n):
        mx = -np.inf
        for j in range(m):
            if mask[i, j] and x[i, j] > mx:
                mx = x[i, j]
        if mx == -np.inf:
            for j in range(m):
                out[i, j] = 1.0 / m
            continue
        s = 0.0
        for j in range(m):
            if mask[i, j]:
                e = math.exp(x[i, j] - mx)
                out[i, j] = e
                s += e
        for j in range(m):
            out[i, j] /= s
    return out


@njit(cache=True, nogil=True)
def layer_norm(x, gain, bias, eps):
    n, m = x.shape
    out = np.empty((n, m))
    for i in range(n):
        mu = 0.0
        for j in range(m):
            mu += x[i, j]
        mu /= m
        var = 0.0
        for j in range(m):
            d = x[i, j] - mu
            var += d * d
        var /= m
        inv = 1.0 / math.sqrt(var + eps)
        for j in range(m):
            out[i, j] = (x[i, j] - mu) * inv * gain[j] + bias[j]
    return out


@njit(cache=True, nogil=True)
def gat_aggregate(wh, score_dst, score_src, indptr, nbr, slope):
    """One attention head over a CSR in-neighbour list.

    Node ``i`` attends over ``nbr[indptr[i]:indptr[i+1]]``. Returns the
    pre-activation aggregate and the attention coefficient of every edge.
    """
    n, d = wh.shape
    out = np.zeros((n, d))
    alpha = np.empty(nbr.shape[0])
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        mx = -np.inf
        for e in range(lo, hi):
            z = score_dst[i] + score_src[nbr[e]]
            if z < 0.0:
                z *= slope
            alpha[e] = z
            if z > mx:
                mx = z
        s = 0.0
        for e in range(lo, hi):
            v = math.exp(alpha[e] - mx)
            alpha[e] = v
            s += v
        for e in range(lo, hi):
            alpha[e] /= s
            w = alpha[e]
            j = nbr[e]
            for c in range(d):
                out[i, c] += w * wh[j, c]
    return out, alpha
