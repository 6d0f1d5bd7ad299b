from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anisosob.errors import GridMismatch, ZeroField
from anisosob.exponents import (
    EpsilonExponents,
    epsilon_exponents,
    exponent_vector,
    fixed_exponents,
)
from anisosob.functional import (
    constraint_norm,
    energy,
    energy_and_gradient,
    energy_density,
    energy_gradient,
    hessian_diagonal,
    limit_energy,
    troisi_ratios,
)
from anisosob.grid import Field, lp_norm, make_grid

from conftest import random_zero_boundary

X122 = exponent_vector([1, 2, 2])


def brute_energy(v, h, exps, n1, delta):
    """Scalar per-node loop, independent of the vectorized kernels."""
    total = 0.0
    shape = v.shape
    N = v.ndim

    def d(idx, i):
        nxt = list(idx)
        nxt[i] += 1
        up = v[tuple(nxt)] if nxt[i] < shape[i] else 0.0
        return (up - v[idx]) / h[i]

    for idx in itertools.product(*[range(n) for n in shape]):
        if n1:
            r = exps[0]
            s = sum(d(idx, i) ** 2 for i in range(n1)) + delta * delta
            total += (s ** (r / 2) - delta**r) / r
        for i in range(n1, N):
            q = exps[i]
            g = d(idx, i)
            if q >= 2 or delta == 0:
                total += abs(g) ** q / q
            else:
                total += ((g * g + delta * delta) ** (q / 2) - delta**q) / q
    return total * float(np.prod(h))


def test_zero_field():
    g = make_grid([1, 1, 1], [5, 5, 5])
    ee = epsilon_exponents(X122, 0.1)
    br = energy(g.zeros(), ee, 1e-3)
    assert br.total == 0.0 and br.grad1_term == 0.0 and br.axis_terms == (0.0, 0.0)
    assert not energy_gradient(g.zeros(), ee, 1e-3).values.any()
    assert limit_energy(g.zeros(), X122).total == 0.0


def test_spike_matches_per_node_loop():
    g = make_grid([1.0, 1.5, 2.0], [5, 5, 5])
    ee = epsilon_exponents(X122, 0.1)
    u = g.zeros()
    u.values[2, 2, 2] = 1.7
    br = energy(u, ee, 0.0)
    ref = brute_energy(u.values, g.spacings, ee.axis_exponents, 1, 0.0)
    assert br.total == pytest.approx(ref, rel=1e-13)
    # hand stencil: block term sees |D_1 u| = 1.7/h at two nodes
    h = g.spacings
    r = 1.1
    block = 2 * (1.7 / h[0]) ** r / r * g.cell_volume
    assert br.grad1_term == pytest.approx(block, rel=1e-13)
    for i, q in zip((1, 2), ee.p_eps):
        assert br.axis_terms[i - 1] == pytest.approx(
            2 * (1.7 / h[i]) ** q / q * g.cell_volume, rel=1e-13
        )


def test_random_field_matches_per_node_loop(rng):
    g = make_grid([1.0, 1.0, 1.0], [5, 4, 6])
    u = random_zero_boundary(g, rng)
    for exps, n1, delta in [
        ((1.1, 2.4, 2.4), 1, 1e-3),
        ((1.2, 1.2, 1.5), 2, 0.1),
        ((2.0, 3.0, 1.4), 0, 0.0),
    ]:
        ee = EpsilonExponents(3, n1, 0.1, (), (), exps[n1:], exps[0], 5.0, 1.0, max(exps))
        ref = brute_energy(u.values, g.spacings, exps, n1, delta)
        assert energy(u, ee, delta).total == pytest.approx(ref, rel=1e-12)


@given(st.floats(-4, 4).filter(lambda c: abs(c) > 1e-3), st.integers(0, 2**31))
def test_homogeneity_per_term(c, seed):
    g = make_grid([1, 1, 1], [6, 6, 6])
    u = random_zero_boundary(g, np.random.default_rng(seed))
    ee = epsilon_exponents(X122, 0.1)
    a = energy(u, ee, 0.0)
    b = energy(u * c, ee, 0.0)
    assert b.grad1_term == pytest.approx(abs(c) ** 1.1 * a.grad1_term, rel=1e-12)
    for q, ta, tb in zip(ee.p_eps, a.axis_terms, b.axis_terms):
        assert tb == pytest.approx(abs(c) ** q * ta, rel=1e-12)


def test_total_variation_of_hat():
    # one-dimensional BV energy: exponents constructed directly
    ee1 = EpsilonExponents(1, 1, 0.0, (), (), (), 1.0, 1.0, 1.0, 1.0)
    for n in (21, 41, 81):
        g = make_grid([2.0], [n])
        u = g.sample(lambda x: np.maximum(0.0, 1.0 - np.abs(x)))
        assert energy(u, ee1, 0.0).total == pytest.approx(2.0, abs=1e-12)


def test_energy_tends_to_limit(rng):
    g = make_grid([1, 1, 1], [6, 6, 6])
    u = random_zero_boundary(g, rng)
    lim = limit_energy(u, X122, 1e-3).total
    prev = math.inf
    for eps in (1e-2, 1e-3, 1e-4, 1e-5):
        err = abs(energy(u, epsilon_exponents(X122, eps), 1e-3).total - lim)
        assert err < prev
        prev = err
    assert prev < 1e-3 * lim


@pytest.mark.parametrize("eps,delta", [(0.1, 1e-4), (0.4, 1e-2), (0.0125, 1e-6)])
def test_gradient_matches_central_differences(eps, delta):
    rng = np.random.default_rng(7)
    g = make_grid([1.0, 1.2, 0.9], [7, 6, 8])
    ee = epsilon_exponents(X122, eps)
    # smooth bump plus small noise, zero boundary
    base = g.sample(lambda x, y, z: np.exp(-(x * x + y * y + z * z) * 2.0)).values
    u = Field(g, base + 0.05 * rng.standard_normal(g.counts)).zero_boundary()
    v = random_zero_boundary(g, rng)
    grad = energy_gradient(u, ee, delta)
    exact = float(np.vdot(grad.values, v.values)) * g.cell_volume
    t = 1e-5
    fd = (energy(u + v * t, ee, delta).total - energy(u - v * t, ee, delta).total) / (2 * t)
    assert abs(exact - fd) <= 1e-5 * abs(exact)


def test_gradient_all_quadratic_is_discrete_laplacian():
    g = make_grid([3.0], [5])  # h = 1.5
    ee = fixed_exponents([2.0], 2.0)
    h = g.spacings[0]
    n = 5
    # -Delta with zero extension on the forward-difference stencil: D^T D
    D = np.zeros((n, n))
    for k in range(n):
        D[k, k] = -1.0 / h
        if k + 1 < n:
            D[k, k + 1] = 1.0 / h
    A = D.T @ D
    rng = np.random.default_rng(3)
    for _ in range(5):
        u = Field(g, rng.standard_normal(n))
        np.testing.assert_allclose(energy_gradient(u, ee, 0.3).values, A @ u.values, rtol=1e-13, atol=1e-13)


def test_dimension_mismatch():
    g = make_grid([1, 1], [4, 4])
    with pytest.raises(GridMismatch):
        energy(g.zeros(), epsilon_exponents(X122, 0.1))


@given(st.integers(0, 2**31), st.sampled_from([0.4, 0.1, 0.0125]), st.sampled_from([0.0, 1e-3]))
def test_convex_along_segments(seed, eps, delta):
    rng = np.random.default_rng(seed)
    g = make_grid([1, 1, 1], [5, 5, 5])
    u = random_zero_boundary(g, rng)
    v = random_zero_boundary(g, rng)
    ee = epsilon_exponents(X122, eps)
    mid = energy((u + v) * 0.5, ee, delta).total
    assert mid <= 0.5 * (energy(u, ee, delta).total + energy(v, ee, delta).total) + 1e-12


def test_constraint_norm_is_lp_norm(rng):
    g = make_grid([1, 1, 1], [5, 5, 5])
    u = random_zero_boundary(g, rng)
    assert constraint_norm(u, 4.125) == lp_norm(u, 4.125)
    assert constraint_norm(g.zeros(), 3.0) == 0.0


def _bump(n, L=3.0):
    g = make_grid([L, L, L], [n, n, n])
    return g.sample(lambda x, y, z: np.exp(-(x * x + 2 * y * y + z * z)))


def test_troisi_ratios_examples(rng):
    u = _bump(17)
    pr, sr = troisi_ratios(u, X122)
    assert pr > 0 and sr >= pr
    pr2, sr2 = troisi_ratios(u * 3.7, X122)
    assert pr2 == pytest.approx(pr, rel=1e-12) and sr2 == pytest.approx(sr, rel=1e-12)
    with pytest.raises(ZeroField):
        troisi_ratios(u.grid.zeros(), X122)


@given(st.integers(0, 2**31))
def test_troisi_am_gm(seed):
    g = make_grid([1, 1, 1], [5, 5, 5])
    u = random_zero_boundary(g, np.random.default_rng(seed))
    pr, sr = troisi_ratios(u, X122)
    assert sr >= pr * (1 - 1e-12)


def test_troisi_ratios_stable_under_refinement():
    a = troisi_ratios(_bump(33), X122)
    b = troisi_ratios(_bump(65), X122)
    assert b[0] == pytest.approx(a[0], rel=0.02)
    assert b[1] == pytest.approx(a[1], rel=0.02)


@pytest.mark.parametrize("exps,n1,delta", [((1.1, 2.4, 2.4), 1, 1e-2), ((1.2, 1.2, 1.6), 2, 1e-1)])
def test_hessian_diagonal_matches_differences(exps, n1, delta):
    rng = np.random.default_rng(11)
    g = make_grid([1, 1, 1], [5, 5, 5])
    ee = EpsilonExponents(3, n1, 0.1, (), (), exps[n1:], exps[0], 5.0, 1.0, max(exps))
    u = random_zero_boundary(g, rng, 0.2, 1.0)
    d = hessian_diagonal(u, ee, delta)
    k = (2, 1, 3)
    e = g.zeros()
    e.values[k] = 1.0
    t = 1e-5
    gp = energy_gradient(u + e * t, ee, delta).values[k]
    gm = energy_gradient(u - e * t, ee, delta).values[k]
    assert d[k] == pytest.approx((gp - gm) / (2 * t), rel=1e-5)


@given(st.integers(0, 2**31), st.sampled_from([0.0, 1e-2]))
def test_energy_density_sums_to_energy(seed, delta):
    g = make_grid([1, 2, 1], [5, 6, 4])
    u = random_zero_boundary(g, np.random.default_rng(seed))
    ee = epsilon_exponents(X122, 0.2)
    dens = energy_density(u, ee, delta)
    assert np.all(dens >= 0)
    assert float(dens.sum()) * g.cell_volume == pytest.approx(energy(u, ee, delta).total, rel=1e-12)


def test_breakdown_sums(rng):
    g = make_grid([1, 1, 1], [6, 6, 6])
    u = random_zero_boundary(g, rng)
    br, _ = energy_and_gradient(u, epsilon_exponents(X122, 0.1), 1e-4)
    assert br.total == pytest.approx(br.grad1_term + sum(br.axis_terms), rel=1e-15)
    assert br.grad1_term >= 0 and all(t >= 0 for t in br.axis_terms)
