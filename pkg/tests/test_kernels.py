import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from otlab import kernels
from otlab.fixtures import grid2d, regular_polygon


@given(st.integers(0, 10**6), st.integers(1, 30), st.integers(1, 30))
def test_lse_and_gibbs(seed, n, k):
    rng = np.random.default_rng(seed)
    logk = rng.normal(size=(n, k)) * 50
    logk[rng.random((n, k)) < 0.1] = -np.inf
    logk[:, 0] = rng.normal(size=n)
    a = rng.normal(size=k) * 50
    np.testing.assert_allclose(kernels.lse_rows_numba(logk, a), kernels.lse_rows_numpy(logk, a), rtol=1e-13)
    l1, w1 = kernels.gibbs_rows_numba(logk, a)
    l2, w2 = kernels.gibbs_rows_numpy(logk, a)
    np.testing.assert_allclose(l1, l2, rtol=1e-13)
    np.testing.assert_allclose(w1, w2, atol=1e-14)
    np.testing.assert_allclose(w1.sum(axis=1), 1.0, atol=1e-12)


def test_lse_against_direct():
    rng = np.random.default_rng(0)
    logk, a = rng.normal(size=(5, 7)), rng.normal(size=7)
    np.testing.assert_allclose(kernels.lse_rows(logk, a), np.log(np.exp(logk + a).sum(axis=1)), rtol=1e-14)


@given(st.integers(0, 10**6))
def test_log_matmul(seed):
    rng = np.random.default_rng(seed)
    la, lb = rng.normal(size=(6, 9)), rng.normal(size=(9, 4))
    ref = np.log(np.exp(la) @ np.exp(lb))
    for f in (kernels.log_matmul_numba, kernels.log_matmul_numpy):
        np.testing.assert_allclose(f(la, lb), ref, rtol=1e-13)
    la[0] = -np.inf
    assert np.all(kernels.log_matmul_numba(la, lb)[0] == -np.inf)
    assert np.all(kernels.log_matmul_numpy(la, lb)[0] == -np.inf)
    np.testing.assert_allclose(kernels.log_matmul_numba(la - 2000, lb), kernels.log_matmul_numpy(la - 2000, lb), rtol=1e-13)


@given(st.integers(0, 10**6))
def test_maxplus(seed):
    rng = np.random.default_rng(seed)
    psi, d = rng.normal(size=5), np.abs(rng.normal(size=(5, 11)))
    ref = np.max(psi[:, None] - 1.3 * d, axis=0)
    np.testing.assert_array_equal(kernels.maxplus_extend_numba(psi, 1.3, d), ref)
    np.testing.assert_array_equal(kernels.maxplus_extend_numpy(psi, 1.3, d), ref)


def test_edge_slopes():
    sp = grid2d(7)
    f = np.random.default_rng(0).normal(size=sp.n)
    indptr, indices, lengths = sp.csr
    a = kernels.edge_slopes_numba(f, indptr, indices, lengths)
    b = kernels.edge_slopes_numpy(f, indptr, indices, lengths)
    np.testing.assert_array_equal(a, b)
    i = 24
    nb = sp.neighbors(i)
    np.testing.assert_allclose(a[i], np.max(np.abs(f[nb] - f[i])) / sp.mesh)


@pytest.mark.parametrize("torus", [True, False])
def test_trace_crossings_backends(torus):
    rng = np.random.default_rng(1)
    poly = regular_polygon((0.4, 0.6), 0.3, 40)
    xs = rng.random((3000, 2))
    ang = rng.random(3000) * 2 * np.pi
    vs = np.column_stack([np.cos(ang), np.sin(ang)])
    a = kernels.trace_crossings_numba(xs, vs, poly, torus)
    b = kernels.trace_crossings_numpy(xs, vs, poly, torus)
    for u, w in zip(a, b):
        np.testing.assert_array_equal(u, w)


def test_vertex_grazing_is_consistent():
    # lines through polygon vertices and along edges
    poly = np.array([(0.2, 0.2), (0.8, 0.2), (0.8, 0.8), (0.2, 0.8)])
    xs = np.array([(0.0, 0.2), (0.0, 0.0), (0.2, 0.0), (0.0, 0.5)])
    vs = np.array([(1.0, 0.0), (np.sqrt(0.5), np.sqrt(0.5)), (0.0, 1.0), (1.0, 0.0)])
    a = kernels.trace_crossings_numba(xs, vs, poly, False)
    b = kernels.trace_crossings_numpy(xs, vs, poly, False)
    for u, w in zip(a, b):
        np.testing.assert_array_equal(u, w)
    nc, tv, fl = a
    assert nc[3] == 1 and tv[3] == 2
    assert np.all(nc <= 1 + tv / 2)


def test_env_flag_selects_numpy():
    code = "from otlab import kernels; print(kernels.BACKEND, kernels.lse_rows is kernels.lse_rows_numpy)"
    env = dict(os.environ, OTLAB_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]
    env.pop("OTLAB_DISABLE_NUMBA")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numba", "False"]


def test_numpy_path_end_to_end():
    code = (
        "import numpy as np\n"
        "from otlab.fixtures import interval_level\n"
        "from otlab.regularize import ctransform_limit\n"
        "r = ctransform_limit(lambda y: y[:, 0], [interval_level(32)])\n"
        "print(repr(r[0]['sup_gap']))\n"
    )
    vals = []
    for flag in ("1", "0"):
        env = dict(os.environ, OTLAB_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        vals.append(float(out.stdout))
    np.testing.assert_allclose(vals[0], vals[1], rtol=1e-12)
