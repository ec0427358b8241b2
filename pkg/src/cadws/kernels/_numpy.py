"""Pure-numpy versions of the kernels in ``_jit``.

Same contracts; reductions inside numpy may associate differently, so the two
backends agree to rounding error, not bitwise.
"""

import numpy as np


def matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    # Outer-product accumulation keeps the k-order of the jit kernel.
    for p in range(a.shape[1]):
        out += a[:, p : p + 1] * b[p]
    return out


def softmax_rows(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_masked(x, mask):
    mask = np.asarray(mask, dtype=bool)
    masked = np.where(mask, x, -np.inf)
    mx = masked.max(axis=1, keepdims=True)
    empty = ~mask.any(axis=1)
    mx[empty] = 0.0
    e = np.where(mask, np.exp(masked - mx), 0.0)
    s = e.sum(axis=1, keepdims=True)
    s[empty] = 1.0
    out = e / s
    out[empty] = 1.0 / x.shape[1]
    return out


def layer_norm(x, gain, bias, eps):
    # Columns accumulated left to right, matching the compiled kernel bit for bit.
    m = x.shape[1]
    mu = np.zeros((x.shape[0], 1))
    for j in range(m):
        mu[:, 0] += x[:, j]
    mu /= m
    d = x - mu
    var = np.zeros((x.shape[0], 1))
    for j in range(m):
        var[:, 0] += d[:, j] * d[:, j]
    var /= m
    inv = 1.0 / np.sqrt(var + eps)
    return d * inv * gain + bias


def gat_aggregate(wh, score_dst, score_src, indptr, nbr, slope):
    starts = indptr[:-1]
    counts = np.diff(indptr)
    dst = np.repeat(np.arange(wh.shape[0]), counts)
    z = score_dst[dst] + score_src[nbr]
    z = np.where(z < 0.0, z * slope, z)
    mx = np.maximum.reduceat(z, starts)
    ez = np.exp(z - mx[dst])
    alpha = ez / np.add.reduceat(ez, starts)[dst]
    out = np.add.reduceat(alpha[:, None] * wh[nbr], starts, axis=0)
    return out, alpha
