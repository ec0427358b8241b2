import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cadws import kernels
from cadws.errors import DimensionMismatch
from cadws.kernels import _jit, _numpy
from cadws.tensor import (
    concat_cols,
    layer_norm,
    leaky_relu,
    linear,
    matmul,
    mean_rows,
    relu,
    softmax_rows,
)

finite = st.floats(-50, 50, allow_nan=False)


def matrices(rows=st.integers(1, 8), cols=st.integers(1, 8)):
    return st.tuples(rows, cols).flatmap(lambda s: hnp.arrays(np.float64, s, elements=finite))


def test_backend_flag():
    assert kernels.BACKEND in ("numba", "numpy")


def test_matmul_hand():
    assert matmul([[1, 2], [3, 4]], [[5], [6]]).tolist() == [[17.0], [39.0]]


def test_matmul_identity(rng):
    a = rng.standard_normal((5, 4))
    assert np.array_equal(matmul(a, np.eye(4)), a)


def test_matmul_dot():
    assert matmul([[1, 2, 3]], [[4], [5], [6]]).tolist() == [[32.0]]


def test_matmul_mismatch():
    with pytest.raises(DimensionMismatch):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_associative(rng):
    for _ in range(20):
        a, b, c = (rng.standard_normal((8, 8)) for _ in range(3))
        left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
        assert np.max(np.abs(left - right)) <= 1e-6 * max(1.0, np.max(np.abs(left)))


def test_matmul_deterministic(rng):
    a, b = rng.standard_normal((30, 17)), rng.standard_normal((17, 9))
    assert matmul(a, b).tobytes() == matmul(a.copy(), b.copy()).tobytes()


def test_linear_bias():
    assert linear([[1.0, 1.0]], [[1.0], [2.0]], [0.5]).tolist() == [[3.5]]


def test_softmax_uniform():
    assert softmax_rows([[3.0, 3.0, 3.0, 3.0]]).tolist() == [[0.25] * 4]


def test_softmax_hand():
    out = softmax_rows([[0.0, math.log(3.0)]])
    assert out[0] == pytest.approx([0.25, 0.75], abs=1e-15)


@given(matrices(), finite)
def test_softmax_rows_sum_and_shift(m, c):
    out = softmax_rows(m)
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-9, rtol=0)
    assert np.allclose(softmax_rows(m + c), out, atol=1e-12, rtol=0)


def test_softmax_large_values_stable():
    out = softmax_rows([[1000.0, 1000.0]])
    assert out.tolist() == [[0.5, 0.5]]


def test_masked_softmax():
    out = softmax_rows([[1.0, 5.0, 1.0]], mask=[[True, False, True]])
    assert out.tolist() == [[0.5, 0.0, 0.5]]


def test_fully_masked_row_is_uniform():
    out = softmax_rows([[1.0, 2.0], [0.0, 0.0]], mask=[[False, False], [True, True]])
    assert out.tolist() == [[0.5, 0.5], [0.5, 0.5]]


def test_mask_shape_checked():
    with pytest.raises(DimensionMismatch):
        softmax_rows([[1.0, 2.0]], mask=[[True]])


def test_relu_and_leaky():
    x = np.array([[-2.0, 0.0, 3.0]])
    assert relu(x).tolist() == [[0.0, 0.0, 3.0]]
    assert leaky_relu(x).tolist() == [[-0.4, 0.0, 3.0]]
    assert leaky_relu(x, 0.5).tolist() == [[-1.0, 0.0, 3.0]]


@given(matrices(cols=st.integers(2, 8)))
def test_layer_norm_statistics(m):
    m = m + np.arange(m.shape[1])  # avoid constant rows
    out = layer_norm(m)
    var = m.var(axis=1)
    assert np.allclose(out.mean(axis=1), 0.0, atol=1e-9)
    assert np.allclose(out.var(axis=1), var / (var + 1e-5), atol=1e-9)


def test_layer_norm_gain_bias():
    m = np.array([[1.0, 3.0]])
    out = layer_norm(m, gain=[2.0, 2.0], bias=[1.0, 1.0], eps=0.0)
    assert out.tolist() == [[-1.0, 3.0]]
    with pytest.raises(DimensionMismatch):
        layer_norm(m, gain=[1.0])


def test_concat_and_mean_rows():
    a, b = np.ones((2, 1)), np.zeros((2, 2))
    assert concat_cols([a, b]).shape == (2, 3)
    with pytest.raises(DimensionMismatch):
        concat_cols([a, np.ones((3, 1))])
    row = np.array([[1.5, -2.0, 7.0]])
    assert np.array_equal(mean_rows(np.repeat(row, 5, axis=0)), row)


# -- backends agree ----------------------------------------------------------


@settings(max_examples=50)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_matmul_backends_bitwise(n, k, m, seed):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal((n, k)), r.standard_normal((k, m))
    assert np.array_equal(_jit.matmul(a, b), _numpy.matmul(a, b))


@settings(max_examples=50)
@given(matrices())
def test_row_kernels_backends_agree(m):
    assert np.allclose(_jit.softmax_rows(m), _numpy.softmax_rows(m), atol=1e-14, rtol=0)
    g, b = np.full(m.shape[1], 1.5), np.full(m.shape[1], -0.25)
    assert np.array_equal(_jit.layer_norm(m, g, b, 1e-5), _numpy.layer_norm(m, g, b, 1e-5))
    mask = m > 0
    assert np.allclose(_jit.softmax_rows_masked(m, mask), _numpy.softmax_rows_masked(m, mask), atol=1e-14, rtol=0)


def test_gat_aggregate_backends_agree(rng):
    from cadws.workflow import Pattern, generate_pattern

    dag = generate_pattern(Pattern.MONTAGE, 25, seed=2)
    indptr, nbr = dag.attention_csr
    wh = rng.standard_normal((25, 8))
    sd, ss = rng.standard_normal(25), rng.standard_normal(25)
    o1, a1 = _jit.gat_aggregate(wh, sd, ss, indptr, nbr, 0.2)
    o2, a2 = _numpy.gat_aggregate(wh, sd, ss, indptr, nbr, 0.2)
    assert np.allclose(o1, o2, atol=1e-13, rtol=0) and np.allclose(a1, a2, atol=1e-15, rtol=0)


def test_numpy_backend_episode_matches():
    code = (
        "from cadws import kernels; from cadws.policy import GraphPolicy, init_params, PolicyArch;"
        "from cadws.sim import run_episode; from cadws.workflow import ScenarioConfig;"
        "r = run_episode(ScenarioConfig(workflow_count=2, seed=4), GraphPolicy(init_params(PolicyArch(), 1)));"
        "print(kernels.BACKEND, repr(r.total))"
    )
    outs = {}
    for flag in ("0", "1"):
        env = dict(os.environ, CADWS_DISABLE_NUMBA=flag)
        backend, total = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                                        text=True, check=True).stdout.split()
        outs[backend] = float(total)
    assert set(outs) == {"numba", "numpy"}
    assert outs["numba"] == pytest.approx(outs["numpy"], rel=1e-12)
