"""Regularized energy, its discrete first variation, and Troisi ratios.

The coupled block ``|D_1 u|`` (first ``N1`` axes) is smoothed as

    (1/r) * ((|D_1 u|^2 + delta^2)^(r/2) - delta^r),     r = 1 + eps

which vanishes where ``D_1 u = 0`` and whose exact gradient is the flux
``(|D_1 u|^2 + delta^2)^((r-2)/2) D_1 u``.  At ``eps = 0`` the density is
``grad1_mag(u, N1, delta)``.  Axes with exponent ``q < 2`` get the same
smoothing when ``delta > 0``; axes with ``q >= 2`` use the raw power law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels_py, kernels
from .errors import GridMismatch, ZeroField
from .exponents import EpsilonExponents, ExponentVector, exact_exponents
from .grid import Field, diff_array, grad1_mag, lp_norm


@dataclass(frozen=True)
class EnergyBreakdown:
    grad1_term: float
    axis_terms: tuple[float, ...]
    total: float


def _check(u: Field, ee: EpsilonExponents) -> None:
    if u.grid.N != ee.N:
        raise GridMismatch(f"field is {u.grid.N}-dimensional, exponents are for N = {ee.N}")


def _breakdown(terms: np.ndarray, vol: float) -> EnergyBreakdown:
    t = [float(v) * vol for v in terms]
    return EnergyBreakdown(t[0], tuple(t[1:]), float(sum(t)))


def energy_and_gradient(
    u: Field, ee: EpsilonExponents, delta: float, want_grad: bool = True
) -> tuple[EnergyBreakdown, Field | None]:
    _check(u, ee)
    terms, grad = kernels.energy_flux(
        u.values, u.grid.spacings, ee.axis_exponents, ee.N1, delta, want_grad
    )
    br = _breakdown(terms, u.grid.cell_volume)
    return br, (Field(u.grid, grad) if grad is not None else None)


def energy(u: Field, ee: EpsilonExponents, delta: float = 0.0) -> EnergyBreakdown:
    return energy_and_gradient(u, ee, delta, want_grad=False)[0]


def limit_energy(u: Field, x: ExponentVector, delta: float = 0.0) -> EnergyBreakdown:
    return energy(u, exact_exponents(x), delta)


def energy_gradient(u: Field, ee: EpsilonExponents, delta: float) -> Field:
    """Node values of ``-div(flux)``; pairs with test fields via the cell volume."""
    return energy_and_gradient(u, ee, delta)[1]


def constraint_norm(u: Field, q: float) -> float:
    return lp_norm(u, q)


def troisi_ratios(u: Field, x: ExponentVector) -> tuple[float, float]:
    """Empirical lower bounds for the Troisi constant of ``x``.

    Returns ``(product_ratio, sum_ratio)``; the first is the geometric mean of
    the directional norms over ``|u|_{p*}``, the second the arithmetic form
    with the coupled block measured by ``sqrt(N1) |D_1 u|_1``.
    """
    nu = lp_norm(u, x.p_star)
    if nu == 0.0:
        raise ZeroField("troisi_ratios needs a nonzero field")
    h = u.grid.spacings
    N = x.N
    axis_norms = [lp_norm(Field(u.grid, diff_array(u.values, i, h[i])), x.p[i]) for i in range(N)]
    logs = [math.log(a) if a > 0 else -math.inf for a in axis_norms]
    product = math.exp(sum(logs) / N) / nu
    block = float(np.sum(grad1_mag(u, x.N1).values) * u.grid.cell_volume) if x.N1 else 0.0
    total = math.sqrt(x.N1) * block + sum(axis_norms[x.N1:])
    return product, total / (N * nu)


def hessian_diagonal(u: Field, ee: EpsilonExponents, delta: float) -> np.ndarray:
    """Diagonal of the energy Hessian (per unit cell volume).

    Each flux contributes ``dflux_i/dg_i / h_i^2`` to the two nodes of its
    stencil.  Used as a Jacobi preconditioner.
    """
    _check(u, ee)
    v = u.values
    h = u.grid.spacings
    exps = ee.axis_exponents
    N, n1 = ee.N, ee.N1
    out = np.zeros_like(v)

    def spread(c: np.ndarray, i: int) -> None:
        c = c / (h[i] * h[i])
        out[...] += c
        n = v.shape[i]
        hi = [slice(None)] * N
        lo = [slice(None)] * N
        hi[i] = slice(1, n)
        lo[i] = slice(0, n - 1)
        out[tuple(hi)] += c[tuple(lo)]

    if n1:
        r = exps[0]
        gs = [diff_array(v, i, h[i]) for i in range(n1)]
        s = sum(g * g for g in gs) + delta * delta
        safe = np.where(s > 0, s, 1.0)
        w = np.where(s > 0, safe ** (0.5 * (r - 2.0)), 0.0)
        for i in range(n1):
            spread(w * (1.0 + (r - 2.0) * gs[i] ** 2 / safe), i)
        # u at a node enters every block difference taken at that node
        for i in range(n1):
            for j in range(n1):
                if i != j:
                    out += w * (r - 2.0) * gs[i] * gs[j] / safe / (h[i] * h[j])
    for i in range(n1, N):
        q = exps[i]
        g = diff_array(v, i, h[i])
        if q >= 2.0 or delta == 0.0:
            a = np.abs(g)
            c = (q - 1.0) * np.where(a > 0, np.where(a > 0, a, 1.0) ** (q - 2.0), 0.0 if q > 2 else 1.0)
        else:
            s = g * g + delta * delta
            c = s ** (0.5 * (q - 2.0)) * (1.0 + (q - 2.0) * g * g / s)
        spread(c, i)
    return out


def energy_density(u: Field, ee: EpsilonExponents, delta: float = 0.0) -> np.ndarray:
    """Node-wise integrand of :func:`energy` (integrate with the cell volume)."""
    _check(u, ee)
    v = u.values
    h = u.grid.spacings
    exps = ee.axis_exponents
    out = np.zeros_like(v)
    if ee.N1:
        r = exps[0]
        g2 = sum(diff_array(v, i, h[i]) ** 2 for i in range(ee.N1))
        out += _kernels_py.smoothed_power(g2, g2 + delta * delta, r, delta) / r
    for i in range(ee.N1, ee.N):
        q = exps[i]
        g = diff_array(v, i, h[i])
        if q >= 2.0 or delta == 0.0:
            out += np.abs(g) ** q / q
        else:
            out += _kernels_py.smoothed_power(g * g, g * g + delta * delta, q, delta) / q
    return out
