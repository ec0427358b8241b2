"""Hot numeric kernels.

The numba backend is used unless ``CADWS_DISABLE_NUMBA`` is set to a truthy
value (or numba cannot be imported), in which case the pure-numpy versions
run instead. ``BACKEND`` names the active one.
"""

import os
import warnings

from . import _numpy

_disabled = os.environ.get("CADWS_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

if _disabled:
    _impl = _numpy
    BACKEND = "numpy"
else:
    try:
        from . import _jit as _impl

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a declared dependency
        warnings.warn("numba unavailable; using the slower numpy kernels")
        _impl = _numpy
        BACKEND = "numpy"

matmul = _impl.matmul
softmax_rows = _impl.softmax_rows
softmax_rows_masked = _impl.softmax_rows_masked
layer_norm = _impl.layer_norm
gat_aggregate = _impl.gat_aggregate

__all__ = ["BACKEND", "matmul", "softmax_rows", "softmax_rows_masked", "layer_norm", "gat_aggregate"]
