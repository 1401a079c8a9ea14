import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from weatherbias import _backend

npk = _backend.get("numpy")
needs_cython = pytest.mark.skipif("cython" not in _backend.available(), reason="compiled kernels not built")


def same(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()


# --------------------------------------------------------------------------
# numpy reference behaviour
# --------------------------------------------------------------------------

def test_im2col_centre_column_is_input():
    x = np.arange(2 * 4 * 4 * 3, dtype=np.float64).reshape(2, 4, 4, 3)
    cols = npk.im2col3x3(x).reshape(2, 4, 4, 3, 3, 3)
    assert np.array_equal(cols[:, :, :, 1, 1, :], x)
    assert np.all(cols[:, 0, :, 0, :, :] == 0)


def test_col2im_is_adjoint_of_im2col():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 6, 4, 3))
    y = rng.normal(size=(2 * 6 * 4, 27))
    lhs = np.sum(npk.im2col3x3(x) * y)
    rhs = np.sum(x * npk.col2im3x3(y, x.shape))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_maxpool_tie_takes_first_position():
    x = np.ones((1, 2, 2, 1))
    out, idx = npk.maxpool2_forward(x)
    assert out[0, 0, 0, 0] == 1 and idx[0, 0, 0, 0] == 0
    x[0, 1, 0, 0] = 2.0
    assert npk.maxpool2_forward(x)[1][0, 0, 0, 0] == 2


def test_maxpool_backward_routes_to_winner():
    x = np.array([[1.0, 3.0], [2.0, 0.0]]).reshape(1, 2, 2, 1)
    _, idx = npk.maxpool2_forward(x)
    dx = npk.maxpool2_backward(np.full((1, 1, 1, 1), 5.0), idx)
    assert dx.reshape(2, 2).tolist() == [[0.0, 5.0], [0.0, 0.0]]


def test_conv1d_edge_replicates_border():
    img = np.array([1.0, 2.0, 4.0]).reshape(3, 1, 1)
    out = npk.conv1d_edge(img, np.array([0.25, 0.5, 0.25]), 0).ravel()
    assert out.tolist() == [1.25, 2.25, 3.5]


def test_iou_matrix_values():
    m = npk.iou_matrix([[0, 0, 10, 10]], [[0, 0, 10, 10], [0, 0, 10, 5], [20, 20, 30, 30]])
    assert m.tolist() == [[1.0, 0.5, 0.0]]


# --------------------------------------------------------------------------
# compiled twin agrees bit for bit
# --------------------------------------------------------------------------

shapes = st.tuples(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(1, 5))


def arrays(seed, shape, ties=False):
    rng = np.random.default_rng(seed)
    if ties:
        return rng.integers(0, 3, size=shape).astype(np.float64)
    return rng.normal(size=shape)


@needs_cython
@given(shapes, st.integers(0, 2**32 - 1))
def test_im2col_col2im_bitwise(shape, seed):
    cyk = _backend.get("cython")
    b, h, w, c = shape
    x = arrays(seed, (b, h, w, c))
    assert same(npk.im2col3x3(x), cyk.im2col3x3(x))
    cols = arrays(seed + 1, (b * h * w, 9 * c))
    assert same(npk.col2im3x3(cols, x.shape), cyk.col2im3x3(cols, x.shape))


@needs_cython
@given(shapes, st.integers(0, 2**32 - 1), st.booleans())
def test_maxpool_bitwise_including_ties(shape, seed, ties):
    cyk = _backend.get("cython")
    b, h, w, c = shape
    x = arrays(seed, (b, 2 * h, 2 * w, c), ties)
    out_n, idx_n = npk.maxpool2_forward(x)
    out_c, idx_c = cyk.maxpool2_forward(x)
    assert same(out_n, out_c) and same(idx_n, idx_c)
    dout = arrays(seed + 1, out_n.shape)
    assert same(npk.maxpool2_backward(dout, idx_n), cyk.maxpool2_backward(dout, idx_c))


@needs_cython
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 5), st.sampled_from([0, 1]), st.integers(0, 2**32 - 1))
def test_conv1d_edge_bitwise(h, w, r, axis, seed):
    cyk = _backend.get("cython")
    img = arrays(seed, (h, w, 3))
    weights = np.abs(arrays(seed + 1, (2 * r + 1,)))
    weights = (weights + weights[::-1]) / 2
    assert same(npk.conv1d_edge(img, weights, axis), cyk.conv1d_edge(img, weights, axis))


@needs_cython
@given(st.integers(0, 6), st.integers(0, 6), st.integers(0, 2**32 - 1))
def test_iou_matrix_bitwise(n, m, seed):
    cyk = _backend.get("cython")
    rng = np.random.default_rng(seed)

    def boxes(k):
        xy = rng.integers(0, 20, size=(k, 2)).astype(np.float64)
        return np.hstack([xy, xy + rng.integers(1, 10, size=(k, 2))])

    a, b = boxes(n), boxes(m)
    assert same(npk.iou_matrix(a, b), cyk.iou_matrix(a, b))


def test_get_numpy_always_works():
    assert _backend.get("numpy").NAME == "numpy"
    assert "numpy" in _backend.available()


# --------------------------------------------------------------------------
# environment selection and end-to-end agreement
# --------------------------------------------------------------------------

PROBE = """
import hashlib, tempfile
import weatherbias
from weatherbias.detector import TrainConfig, init_model, train
from weatherbias.imaging import double_gaussian_blur
from weatherbias.scenegen import SceneSpec, generate_dataset, render_scene
h = hashlib.sha256()
h.update(double_gaussian_blur(render_scene(SceneSpec(seed=3), 0)[0]).tobytes())
with tempfile.TemporaryDirectory() as d:
    data = generate_dataset(SceneSpec(seed=3), 4, d)
    out = train(init_model(seed=1), data, TrainConfig(learning_rate=0.01, steps=3, batch_size=2, seed=2))
h.update(out.params.tobytes())
print(weatherbias.BACKEND, h.hexdigest())
"""


def run_probe(backend):
    env = dict(os.environ, WEATHERBIAS_BACKEND=backend)
    res = subprocess.run([sys.executable, "-c", PROBE], env=env, capture_output=True, text=True, timeout=300)
    assert res.returncode == 0, res.stderr
    return res.stdout.split()


@needs_cython
def test_env_selects_backend_and_training_is_identical():
    name_n, digest_n = run_probe("numpy")
    name_c, digest_c = run_probe("cython")
    assert (name_n, name_c) == ("numpy", "cython")
    assert digest_n == digest_c
