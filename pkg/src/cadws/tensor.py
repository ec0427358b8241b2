"""Dense float64 matrix operations for forward-only inference.

Matrices are 2-D ``numpy.float64`` arrays in C order. Every reduction runs in
a fixed order (see :mod:`cadws.kernels`), so identical inputs give
bit-identical outputs.
"""

import os

import numpy as np

from . import kernels
from .errors import DimensionMismatch

DEBUG = os.environ.get("CADWS_DEBUG", "").strip().lower() in ("1", "true", "yes", "on")


def as_matrix(x) -> np.ndarray:
    m = np.ascontiguousarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def _check(m):
    if DEBUG and not np.isfinite(m).all():
        raise FloatingPointError("non-finite value in matrix")
    return m


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionMismatch(f"cannot multiply {a.shape} by {b.shape}")
    return _check(kernels.matmul(a, b))


def linear(x, weight, bias=None) -> np.ndarray:
    out = matmul(x, weight)
    if bias is not None:
        out += bias
    return out


def softmax_rows(m, mask=None) -> np.ndarray:
    """Row-wise softmax with max subtraction.

    With ``mask``, only ``True`` entries take part and masked entries get
    probability 0. A fully masked row comes back uniform over all entries.
    """
    m = as_matrix(m)
    if mask is None:
        return _check(kernels.softmax_rows(m))
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    if mask.shape != m.shape:
        raise DimensionMismatch(f"mask shape {mask.shape} does not match {m.shape}")
    return _check(kernels.softmax_rows_masked(m, mask))


def relu(m) -> np.ndarray:
    return np.maximum(as_matrix(m), 0.0)


def leaky_relu(m, slope=0.2) -> np.ndarray:
    m = as_matrix(m)
    return np.where(m < 0.0, m * slope, m)


def layer_norm(m, gain=None, bias=None, eps=1e-5) -> np.ndarray:
    m = as_matrix(m)
    cols = m.shape[1]
    gain = np.ones(cols) if gain is None else np.ascontiguousarray(gain, dtype=np.float64).ravel()
    bias = np.zeros(cols) if bias is None else np.ascontiguousarray(bias, dtype=np.float64).ravel()
    if gain.shape[0] != cols or bias.shape[0] != cols:
        raise DimensionMismatch("layer_norm gain/bias length must equal the column count")
    return _check(kernels.layer_norm(m, gain, bias, float(eps)))


def concat_cols(ms) -> np.ndarray:
    ms = [as_matrix(m) for m in ms]
    rows = {m.shape[0] for m in ms}
    if len(rows) != 1:
        raise DimensionMismatch(f"row counts differ: {sorted(rows)}")
    return np.concatenate(ms, axis=1)


def mean_rows(m) -> np.ndarray:
    """Column means as a 1 x cols row vector (rows summed top to bottom)."""
    m = as_matrix(m)
    acc = np.zeros(m.shape[1])
    for row in m:
        acc += row
    return (acc / m.shape[0]).reshape(1, -1)
