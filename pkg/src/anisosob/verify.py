"""Flux fields, pairing and Euler-Lagrange checks, closed-form oracles.

The flux of a field splits into the coupled block ``sigma1`` (first ``N1``
axes, the regularized 1-Laplacian flux) and the per-axis tail fluxes.  They
are exactly the fields whose discrete divergence is minus the energy
gradient, so every identity checked here is an identity of the discrete
scheme and not of some other discretization.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _kernels_py
from .errors import DegenerateG, ExponentOutOfRange, GridMismatch, NegativeValues
from .exponents import (
    EpsilonExponents,
    ExponentVector,
    fixed_exponents,
)
from .functional import energy, energy_and_gradient
from .grid import (
    Field,
    Grid,
    backward_div,
    diff_array,
    grad1_mag,
    lp_norm,
)

# -- flux fields --------------------------------------------------------------


@dataclass(frozen=True)
class SigmaFields:
    sigma1: tuple[Field, ...]
    sigma_tail: tuple[Field, ...]
    sup_sigma1: float
    delta: float = 0.0

    @property
    def all(self) -> list[Field]:
        return list(self.sigma1) + list(self.sigma_tail)


def sigma_fields(u: Field, ee: EpsilonExponents, delta: float) -> SigmaFields:
    """Node fluxes of the regularized energy; ``-div`` of them is its gradient."""
    if u.grid.N != ee.N:
        raise GridMismatch("field and exponents differ in dimension")
    _, flux = _kernels_py.fluxes(u.values, u.grid.spacings, ee.axis_exponents, ee.N1, delta)
    s1 = tuple(Field(u.grid, f) for f in flux[: ee.N1])
    st = tuple(Field(u.grid, f) for f in flux[ee.N1 :])
    sup = float(np.sqrt(sum(f.values**2 for f in s1)).max()) if s1 else 0.0
    return SigmaFields(s1, st, sup, delta)


def pairing_check(s: SigmaFields, u: Field, N1: int) -> tuple[float, float]:
    """``(defect, green_residual)``.

    ``defect = int(|D_1 u|_delta - sigma1 . D_1 u)``.  At ``delta = 0`` it is
    nonnegative whenever ``sup |sigma1| <= 1``.  The smoothed magnitude sits
    below ``|D_1 u|`` by up to ``delta`` per node, so for ``delta > 0`` (or a
    flux with ``sup > 1``) the sign is not fixed.

    ``green_residual = |int sigma . D u + int div(sigma) u|``, zero up to
    rounding for any zero-boundary ``u``.
    """
    fields = s.all
    if len(s.sigma1) != N1:
        raise GridMismatch(f"flux has {len(s.sigma1)} block components, expected N1 = {N1}")
    for f in fields:
        if f.grid != u.grid:
            raise GridMismatch("flux and field live on different grids")
    vol = u.grid.cell_volume
    h = u.grid.spacings
    pair1 = sum(
        float(np.vdot(s.sigma1[i].values, diff_array(u.values, i, h[i]))) for i in range(N1)
    )
    mag = float(np.sum(grad1_mag(u, N1, s.delta).values)) if N1 else 0.0
    defect = (mag - pair1) * vol
    if len(fields) != u.grid.N:
        return defect, math.nan
    pair = sum(
        float(np.vdot(f.values, diff_array(u.values, i, h[i]))) for i, f in enumerate(fields)
    )
    div = backward_div(fields)
    green = abs(pair + float(np.vdot(div.values, u.values))) * vol
    return defect, green


def relative_pairing_defect(s: SigmaFields, u: Field, N1: int) -> float:
    mag = float(np.sum(grad1_mag(u, N1, s.delta).values)) * u.grid.cell_volume
    if mag == 0.0:
        return 0.0
    return pairing_check(s, u, N1)[0] / mag


def _interior_rel(lhs: np.ndarray, rhs: np.ndarray, mask: np.ndarray) -> float:
    den = max(np.linalg.norm(lhs[mask]), np.linalg.norm(rhs[mask]))
    num = np.linalg.norm((lhs - rhs)[mask])
    if den == 0.0:
        return 0.0
    return float(num / den)


def limit_el_residual(
    u: Field, s: SigmaFields, l: float, x: ExponentVector, margin: int = 1
) -> float:
    """Relative interior residual of ``-div(sigma) = l u^(p*-1)``.

    Normalized by the larger of the two sides, so a wrong multiplier (``l = 0``
    included) gives a value near 1 and never an infinity.
    """
    if len(s.all) != u.grid.N:
        raise GridMismatch("flux does not match the field dimension")
    lhs = -backward_div(s.all).values
    rhs = l * np.sign(u.values) * np.abs(u.values) ** (x.p_star - 1.0)
    return _interior_rel(lhs, rhs, u.grid.interior_mask(margin))


# -- truncations --------------------------------------------------------------


@dataclass(frozen=True)
class ShiftG:
    """``g(u) = (u - k)^+``."""

    k: float

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("shift k must be >= 0")

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return np.maximum(u - self.k, 0.0)


@dataclass(frozen=True)
class PowerG:
    """``g(u) = u min(u^a, L)``."""

    a: float
    L: float

    def __post_init__(self):
        if not (self.a > 0 and self.L > 0):
            raise ValueError("power truncation needs a > 0 and L > 0")

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return u * np.minimum(u**self.a, self.L)


def truncation_identity(
    u: Field,
    g: Callable[[np.ndarray], np.ndarray],
    l: float,
    x: ExponentVector,
    delta: float = 0.0,
) -> float:
    """Relative defect ``|LHS - l RHS| / (l RHS)`` of the truncation identity

        int |D_1 g(u)| + sum_tail int |D_i u|^(p_i-2) D_i u D_i g(u)
            = l int g(u) u^(p*-1)

    The tail uses the discrete chain rule ``D_i g(u)`` in place of
    ``g'(u) D_i u`` so that the identity is the scheme's own weak form.
    """
    v = u.values
    if np.any(v < 0):
        raise NegativeValues("truncation identity needs u >= 0")
    gv = g(v)
    if not np.any(gv != 0.0):
        raise DegenerateG("g(u) vanishes identically")
    grid = u.grid
    h = grid.spacings
    vol = grid.cell_volume
    gu = Field(grid, gv)
    lhs = float(np.sum(grad1_mag(gu, x.N1, delta).values)) if x.N1 else 0.0
    for i in range(x.N1, x.N):
        d = diff_array(v, i, h[i])
        lhs += float(np.sum(np.abs(d) ** (x.p[i] - 2.0) * d * diff_array(gv, i, h[i])))
    lhs *= vol
    rhs = float(np.sum(gv * v ** (x.p_star - 1.0))) * vol
    return abs(lhs - l * rhs) / (l * rhs)


# -- closed-form extremal -----------------------------------------------------


def _aftl_raw(grid: Grid, a: float, b: float, p: float) -> Field:
    N = grid.N
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be > 0")
    if not 1 < p < N:
        raise ExponentOutOfRange(f"need 1 < p < N = {N}, got p = {p}")
    pc = p / (p - 1.0)
    gam = (p - N) / p
    return grid.sample(lambda *xs: (a + b * sum(np.abs(x) ** pc for x in xs)) ** gam)


def aftl_field(grid: Grid, a: float, b: float, p: float) -> Field:
    """Sampled ``(a + b sum |x_i|^(p/(p-1)))^((p-N)/p)``, unit ``L^{p*}`` norm."""
    u = _aftl_raw(grid, a, b, p)
    q = grid.N * p / (grid.N - p)
    return Field(grid, u.values / lp_norm(u, q))


def aftl_multiplier(grid: Grid, a: float, b: float, p: float) -> float:
    """Multiplier of :func:`aftl_field` in ``-sum D_i(|D_i u|^(p-2) D_i u) = l u^(p*-1)``.

    The unnormalized profile solves the equation with ``C = |g b p'|^(p-1) N a``
    (``g = (p-N)/p``, ``p' = p/(p-1)``); dividing by its norm ``c`` gives
    ``l = C c^(p*-p)``.
    """
    N = grid.N
    u = _aftl_raw(grid, a, b, p)
    q = N * p / (N - p)
    c = lp_norm(u, q)
    pc = p / (p - 1.0)
    gam = (p - N) / p
    C = abs(gam * b * pc) ** (p - 1.0) * N * a
    return C * c ** (q - p)


def aftl_exponents(N: int, p: float) -> EpsilonExponents:
    return fixed_exponents([p] * N, N * p / (N - p))


def aftl_residual(grid: Grid, a: float, b: float, p: float, margin: int = 2) -> float:
    """Interior residual of the sampled closed form with its analytic multiplier.

    Two layers are dropped at each face: the truncation jump at the box
    boundary enters the stencil of the first interior layer.
    """
    from .solver import el_residual

    u = aftl_field(grid, a, b, p)
    ee = aftl_exponents(grid.N, p)
    return el_residual(u, aftl_multiplier(grid, a, b, p), ee, 0.0, margin)


def refinement_order(values: Sequence[float]) -> list[float]:
    """Observed orders ``log2(r_k / r_{k+1})`` for successive grid halvings."""
    return [math.log2(values[k] / values[k + 1]) for k in range(len(values) - 1)]


# -- gradient check -----------------------------------------------------------


def gradient_check(
    u: Field, ee: EpsilonExponents, delta: float, direction: np.ndarray, step: float = 1e-6
) -> float:
    """Relative error of ``<grad E, d>`` against a central difference quotient."""
    _, g = energy_and_gradient(u, ee, delta)
    vol = u.grid.cell_volume
    exact = float(np.vdot(g.values, direction)) * vol
    ep = energy(Field(u.grid, u.values + step * direction), ee, delta).total
    em = energy(Field(u.grid, u.values - step * direction), ee, delta).total
    fd = (ep - em) / (2.0 * step)
    scale = max(abs(exact), abs(fd), 1e-300)
    return abs(exact - fd) / scale


# -- report -------------------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""


def checks_to_json(checks: Sequence[Check]) -> dict:
    return {
        "passed": all(c.passed for c in checks),
        "checks": [
            {
                "name": c.name,
                "passed": bool(c.passed),
                "value": c.value,
                "threshold": c.threshold,
                "detail": c.detail,
            }
            for c in checks
        ],
    }


def write_report(checks: Sequence[Check], path: str | Path) -> None:
    def fmt(o):
        if isinstance(o, float):
            return float(f"{o:.17g}")
        return o

    data = checks_to_json(checks)
    for c in data["checks"]:
        for k in ("value", "threshold"):
            c[k] = fmt(c[k]) if math.isfinite(c[k]) else str(c[k])
    Path(path).write_text(json.dumps(data, indent=2) + "\n")

