from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anisosob import _kernels_py, kernels

compiled = pytest.importorskip("anisosob._kernels")


@st.composite
def problem(draw):
    N = draw(st.integers(1, 3))
    n1 = draw(st.integers(0, N))
    counts = [draw(st.integers(3, 7)) for _ in range(N)]
    h = tuple(draw(st.floats(0.1, 2.0)) for _ in range(N))
    r = draw(st.floats(1.0, 1.5))
    tail = [draw(st.sampled_from([1.2, 1.7, 2.0, 2.5, 3.3])) for _ in range(N - n1)]
    delta = draw(st.sampled_from([0.0, 1e-6, 1e-3, 0.3]))
    seed = draw(st.integers(0, 2**31))
    u = np.random.default_rng(seed).standard_normal(counts)
    sl = tuple(slice(1, -1) for _ in counts)
    z = np.zeros(counts)
    z[sl] = u[sl]
    return z, h, (r,) * n1 + tuple(tail), n1, delta


@given(problem())
def test_backends_agree(pb):
    u, h, exps, n1, delta = pb
    t1, g1 = _kernels_py.energy_flux(u, h, exps, n1, delta, True)
    t2, g2 = compiled.energy_flux(u, h, exps, n1, delta, True)
    np.testing.assert_allclose(t2, t1, rtol=1e-12, atol=1e-14)
    scale = max(np.abs(g1).max(), 1.0)
    np.testing.assert_allclose(g2, g1, rtol=1e-11, atol=1e-12 * scale)


def test_backends_agree_without_gradient(rng):
    u = np.zeros((6, 5, 4))
    u[1:-1, 1:-1, 1:-1] = rng.random((4, 3, 2))
    a = _kernels_py.energy_flux(u, (0.5, 0.5, 0.5), (1.1, 1.1, 2.4), 2, 1e-4, False)
    b = compiled.energy_flux(u, (0.5, 0.5, 0.5), (1.1, 1.1, 2.4), 2, 1e-4, False)
    assert a[1] is None and b[1] is None
    np.testing.assert_allclose(b[0], a[0], rtol=1e-13)


def test_backend_switch():
    try:
        kernels.use_backend("python")
        assert kernels.BACKEND == "python"
        kernels.use_backend("cython")
        assert kernels.BACKEND == "cython"
    finally:
        kernels.use_backend("cython")
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")
