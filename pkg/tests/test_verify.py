from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anisosob.errors import DegenerateG, ExponentOutOfRange, GridMismatch, NegativeValues
from anisosob.exponents import (
    EpsilonExponents,
    ExponentVector,
    epsilon_exponents,
    exponent_vector,
    fixed_exponents,
)
from anisosob.grid import Field, backward_div, diff_array, grad1_mag, make_grid
from anisosob.solver import multiplier, normalize
from anisosob.verify import (
    Check,
    PowerG,
    ShiftG,
    SigmaFields,
    aftl_exponents,
    aftl_field,
    aftl_multiplier,
    aftl_residual,
    gradient_check,
    limit_el_residual,
    pairing_check,
    refinement_order,
    relative_pairing_defect,
    sigma_fields,
    truncation_identity,
    write_report,
)

from _oracles import linear_eigenpair, linear_setup
from conftest import random_zero_boundary

X122 = exponent_vector([1, 2, 2])
# quadratic directions with the constraint exponent 2: the linear eigenproblem
X_LINEAR = ExponentVector(3, 0, (2.0, 2.0, 2.0), 2.0, 2.0, (0, 1, 2))


def _one_dim(r):
    return EpsilonExponents(1, 1, r - 1.0, (), (), (), r, 2.0, 1.0, r)


def test_sigma_of_zero_field():
    g = make_grid([1, 1, 1], [5, 5, 5])
    s = sigma_fields(g.zeros(), epsilon_exponents(X122, 0.1), 1e-3)
    assert s.sup_sigma1 == 0.0
    assert all(not f.values.any() for f in s.all)


def test_sigma_power_algebra():
    g = make_grid([1.0], [3])  # h = 1
    u = Field(g, [0.0, 5.0, 0.0])
    s = sigma_fields(u, _one_dim(1.5), 0.0)
    np.testing.assert_allclose(s.sigma1[0].values, [math.sqrt(5), -math.sqrt(5), 0.0], rtol=1e-15)
    assert s.sup_sigma1 == pytest.approx(5**0.5, rel=1e-15)


def test_sigma_magnitude_tends_to_one(rng):
    g = make_grid([1, 1, 1], [7, 7, 7])
    u = random_zero_boundary(g, rng)
    delta = 1e-8
    big = grad1_mag(u, 1).values > 1e3 * delta
    errs = []
    for eps in (0.1, 0.01, 0.001):
        s = sigma_fields(u, epsilon_exponents(X122, eps), delta)
        mag = np.abs(s.sigma1[0].values)
        errs.append(float(np.abs(mag[big] - 1.0).max()))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.02


def test_pairing_linear_flux(rng):
    g = make_grid([1, 1, 1], [6, 6, 6])
    u = random_zero_boundary(g, rng)
    ee = EpsilonExponents(3, 1, 1.0, (0.0, 0.0), (0.0, 0.0), (2.0, 2.0), 2.0, 6.0, 1.0, 2.0)
    delta = 1e-3
    s = sigma_fields(u, ee, delta)
    defect, green = pairing_check(s, u, 1)
    d = diff_array(u.values, 0, g.spacings[0])
    gap = float(np.sum(grad1_mag(u, 1, delta).values - d * d)) * g.cell_volume
    assert defect == pytest.approx(gap, rel=1e-12)
    assert green <= 1e-12


def test_random_unaligned_flux_has_positive_defect():
    rng = np.random.default_rng(5)
    g = make_grid([1, 1, 1], [6, 6, 6])
    for _ in range(50):
        u = random_zero_boundary(g, rng)
        raw = rng.uniform(-1, 1, g.counts)
        s = SigmaFields((Field(g, raw),), (g.zeros(), g.zeros()), float(np.abs(raw).max()), 0.0)
        assert s.sup_sigma1 <= 1.0
        assert pairing_check(s, u, 1)[0] > 0.0


@given(st.integers(0, 2**31), st.sampled_from([0.4, 0.1, 0.0125]), st.sampled_from([0.0, 1e-3]))
@settings(max_examples=40)
def test_green_identity_and_pairing_bound(seed, eps, delta):
    rng = np.random.default_rng(seed)
    g = make_grid([1, 1.5, 1], [5, 6, 7])
    u = random_zero_boundary(g, rng)
    s = sigma_fields(u, epsilon_exponents(X122, eps), delta)
    _, green = pairing_check(s, u, 1)
    pair = sum(float(np.abs(f.values * diff_array(u.values, i, g.spacings[i])).sum()) for i, f in enumerate(s.all))
    assert green <= 1e-13 * max(pair, 1.0) * g.cell_volume
    # node-wise Cauchy-Schwarz against the exact magnitude
    d = diff_array(u.values, 0, g.spacings[0])
    lhs = np.abs(s.sigma1[0].values * d)
    assert np.all(lhs <= s.sup_sigma1 * grad1_mag(u, 1).values * (1 + 1e-12))


def test_pairing_checks_grids_and_components():
    a = make_grid([1, 1, 1], [5, 5, 5])
    b = make_grid([1, 1, 1], [6, 6, 6])
    s = sigma_fields(a.zeros(), epsilon_exponents(X122, 0.1), 1e-3)
    with pytest.raises(GridMismatch):
        pairing_check(s, b.zeros(), 1)
    with pytest.raises(GridMismatch):
        pairing_check(s, a.zeros(), 2)
    assert relative_pairing_defect(s, a.zeros(), 1) == 0.0


def test_limit_el_linear_oracle():
    g, ee = linear_setup()
    lam, v = linear_eigenpair(g)
    u = normalize(v, 2.0)
    s = sigma_fields(u, ee, 0.0)
    assert limit_el_residual(u, s, lam, X_LINEAR) <= 1e-8
    assert limit_el_residual(u, s, 0.0, X_LINEAR) == pytest.approx(1.0, rel=1e-12)
    assert limit_el_residual(u, s, 2 * lam, X_LINEAR) == pytest.approx(0.5, rel=1e-6)


def test_truncation_identity_linear_oracle():
    g, ee = linear_setup()
    lam, v = linear_eigenpair(g)
    u = normalize(v, 2.0)
    assert truncation_identity(u, ShiftG(0.0), lam, X_LINEAR) <= 1e-8
    assert truncation_identity(u, PowerG(1e-12, 1e12), lam, X_LINEAR) <= 1e-8
    # the identity is a real test: a wrong multiplier fails it
    assert truncation_identity(u, ShiftG(0.0), 1.1 * lam, X_LINEAR) > 0.05


def test_truncation_identity_matches_multiplier_on_any_field(rng):
    # with g = identity the identity reads pairing = l * int u^p*
    g = make_grid([1, 1, 1], [6, 6, 6])
    ee = epsilon_exponents(X122, 0.0125)
    u = normalize(random_zero_boundary(g, rng, 0.0, 1.0), X122.p_star)
    l = multiplier(u, epsilon_exponents(X122, 1e-12), 0.0, tol=1e-6)
    assert truncation_identity(u, ShiftG(0.0), l, X122) <= 1e-6
    del ee


def test_truncation_errors():
    g = make_grid([1, 1, 1], [5, 5, 5])
    u = g.zeros()
    u.values[2, 2, 2] = 1.0
    with pytest.raises(DegenerateG):
        truncation_identity(u, ShiftG(1.0), 1.0, X122)
    with pytest.raises(NegativeValues):
        truncation_identity(u * -1.0, ShiftG(0.0), 1.0, X122)
    with pytest.raises(ValueError):
        ShiftG(-0.1)
    with pytest.raises(ValueError):
        PowerG(0.0, 1.0)
    with pytest.raises(ValueError):
        PowerG(1.0, 0.0)
    np.testing.assert_array_equal(PowerG(1.0, 2.0)(np.array([0.5, 3.0])), [0.25, 6.0])
    np.testing.assert_array_equal(ShiftG(1.0)(np.array([0.5, 3.0])), [0.0, 2.0])


def test_aftl_quadratic_profile():
    g = make_grid([2.0, 2.0, 2.0], [9, 9, 9])
    u = aftl_field(g, 1.0, 2.0, 2.0)
    X, Y, Z = np.meshgrid(*g.axes, indexing="ij")
    ref = (1.0 + 2.0 * (X**2 + Y**2 + Z**2)) ** -0.5
    ref = Field(g, ref).zero_boundary().values
    ref = ref / (np.sum(ref**6) * g.cell_volume) ** (1 / 6)
    np.testing.assert_allclose(u.values, ref, rtol=1e-13)


def test_aftl_is_even():
    g = make_grid([2.0, 1.5, 1.0], [9, 7, 11])
    u = aftl_field(g, 0.5, 1.3, 1.7)
    for ax in range(3):
        np.testing.assert_array_equal(np.flip(u.values, axis=ax), u.values)


def test_aftl_exponent_range():
    g = make_grid([1, 1, 1], [5, 5, 5])
    for p in (1.0, 3.0, 4.0):
        with pytest.raises(ExponentOutOfRange):
            aftl_field(g, 1.0, 1.0, p)
    with pytest.raises(ValueError):
        aftl_field(g, 0.0, 1.0, 2.0)
    ee = aftl_exponents(3, 2.0)
    assert ee.axis_exponents == (2.0, 2.0, 2.0) and ee.p_star_eps == pytest.approx(6.0)


def test_aftl_multiplier_is_consistent():
    # the analytic multiplier beats nearby values on a resolved grid
    g = make_grid([3.0] * 3, [33] * 3)
    l = aftl_multiplier(g, 1.0, 1.0, 2.0)
    r = aftl_residual(g, 1.0, 1.0, 2.0)
    from anisosob.solver import el_residual

    u = aftl_field(g, 1.0, 1.0, 2.0)
    ee = aftl_exponents(3, 2.0)
    assert r < 0.05
    assert r < el_residual(u, 1.1 * l, ee, 0.0, 2)
    assert r < el_residual(u, 0.9 * l, ee, 0.0, 2)


def test_aftl_residual_refines():
    r = [aftl_residual(make_grid([3.0] * 3, [n] * 3), 1.0, 1.0, 2.0) for n in (9, 17, 33)]
    assert all(o >= 0.8 for o in refinement_order(r))


def test_refinement_order_arithmetic():
    assert refinement_order([4.0, 2.0, 0.5]) == [1.0, 2.0]


def test_gradient_check_small(rng):
    g = make_grid([1, 1, 1], [7, 7, 7])
    u = random_zero_boundary(g, rng)
    d = random_zero_boundary(g, rng).values
    assert gradient_check(u, epsilon_exponents(X122, 0.1), 1e-4, d, step=1e-5) <= 1e-5
    assert gradient_check(u, fixed_exponents([2, 2, 2], 2.0), 0.0, d) <= 1e-8


def test_report_json(tmp_path):
    checks = [Check("a", True, 1e-14, 1e-12), Check("b", False, math.inf, 1.0, "blew up")]
    p = tmp_path / "v.json"
    write_report(checks, p)
    data = json.loads(p.read_text())
    assert data["passed"] is False
    assert data["checks"][1]["value"] == "inf"
    assert data["checks"][0]["name"] == "a" and data["checks"][0]["passed"] is True
