import numpy as np
import pytest
from hypothesis import given, strategies as st

from roofkit import kernels
from oracles import cpd_posteriors

seeds = st.integers(0, 2**32 - 1)


@given(seeds, st.integers(1, 40), st.integers(1, 40))
def test_nearest_sqdist_against_brute_force(seed, n, m):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
    brute = np.array([min(float(((p - q) ** 2).sum()) for q in b) for p in a])
    np.testing.assert_allclose(kernels.nearest_sqdist_nb(a, b), brute, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(kernels.nearest_sqdist_np(a, b), brute, rtol=1e-9, atol=1e-12)


@given(seeds)
def test_chamfer_backends_agree(seed):
    rng = np.random.default_rng(seed)
    q = rng.random((50, 3))
    protos = rng.random((4, 60, 3))
    brute = []
    for p in protos:
        d = np.sqrt(((q[:, None] - p[None]) ** 2).sum(-1))
        brute.append(0.5 * (d.min(1).mean() + d.min(0).mean()))
    np.testing.assert_allclose(kernels.chamfer_many_nb(q, protos), brute, rtol=1e-12)
    np.testing.assert_allclose(kernels.chamfer_many_np(q, protos), brute, rtol=1e-9)


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("sigma2", [1e-3, 0.05, 1.0, 10.0])
def test_cpd_estep_matches_textbook(dim, sigma2):
    rng = np.random.default_rng(int(sigma2 * 1000) + dim)
    x = rng.normal(size=(70, dim))
    y = x[:50] + rng.normal(0, 0.1, size=(50, dim))
    p = cpd_posteriors(x, y, sigma2, 0.1)
    # the numba kernel drops terms below exp(-50) ~ 2e-22
    for fn in (kernels.cpd_estep_nb, kernels.cpd_estep_np):
        p1, pt1, px, nll = fn(x, y, sigma2, 0.1)
        np.testing.assert_allclose(p1, p.sum(1), rtol=1e-10, atol=1e-15)
        np.testing.assert_allclose(pt1, p.sum(0), rtol=1e-10, atol=1e-15)
        np.testing.assert_allclose(px, p @ x, rtol=1e-10, atol=1e-12)
        assert np.isfinite(nll)


def test_cpd_estep_objective_backends_agree():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(300, 3)), rng.normal(size=(200, 3))
    for s2 in (1e-4, 0.3, 5.0):
        a = kernels.cpd_estep_nb(x, y, s2, 0.2)
        b = kernels.cpd_estep_np(x, y, s2, 0.2)
        assert np.isclose(a[3], b[3], rtol=1e-10)
        for u, v in zip(a[:3], b[:3]):
            np.testing.assert_allclose(u, v, rtol=1e-9, atol=1e-15)


def test_raster_max_height_backends_agree():
    rng = np.random.default_rng(4)
    tris = rng.uniform(0, 10, size=(40, 3, 3))
    a = kernels.raster_max_height_nb(tris, 0.25, 0.25, 0.5, 20, 20)
    b = kernels.raster_max_height_np(tris, 0.25, 0.25, 0.5, 20, 20)
    np.testing.assert_array_equal(np.isnan(a), np.isnan(b))
    np.testing.assert_allclose(a[~np.isnan(a)], b[~np.isnan(b)], rtol=1e-12)


def test_raster_max_height_single_triangle():
    tri = np.array([[[0.0, 0.0, 1.0], [4.0, 0.0, 1.0], [0.0, 4.0, 5.0]]])
    out = kernels.raster_max_height(tri, 0.5, 0.5, 1.0, 4, 4)
    # plane z = 1 + y inside x + y < 4
    for r in range(4):
        for c in range(4):
            x, y = 0.5 + c, 0.5 + r
            if x + y < 4:
                assert out[r, c] == pytest.approx(1 + y)
            elif x + y > 4:
                assert np.isnan(out[r, c])


def test_public_names_bound():
    for name in kernels.__all__:
        assert callable(getattr(kernels, name))


def test_env_switch_selects_numpy_backend():
    import os
    import subprocess
    import sys

    code = ("from roofkit import kernels, _accel;"
            "assert not _accel.USE_NUMBA;"
            "assert kernels.cpd_estep is kernels.cpd_estep_np;"
            "assert not hasattr(kernels.nearest_sqdist_nb, 'py_func');"
            "from roofkit.fit import cpd_rigid;"
            "import numpy as np;"
            "p = np.random.default_rng(0).normal(size=(40, 3));"
            "r = cpd_rigid(p, p + 1.0);"
            "assert abs(r.transform.translation - 1.0).max() < 1e-4")
    env = dict(os.environ, ROOFKIT_NO_NUMBA="1")
    subprocess.run([sys.executable, "-c", code], check=True, env=env)
