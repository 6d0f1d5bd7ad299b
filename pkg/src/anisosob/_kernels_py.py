"""Pure numpy energy/flux kernel (fallback for the compiled extension).

Contract shared with ``_kernels.pyx``::

    energy_flux(u, h, exps, n1, delta, want_grad)
        -> (terms, grad)

``u`` is an N-d float64 array with zero boundary, ``h`` the spacings,
``exps`` the per-axis exponents (the first ``n1`` belong to the coupled
block and must all be equal).  ``terms`` has ``1 + N - n1`` entries: the
unscaled sum of the block density followed by each axis density (multiply by
the cell volume to integrate).  ``grad`` is ``sum_i D_i^T flux_i`` or None.

Densities:
    block   (s^(r/2) - delta^r) / r,       s = |D_1 u|^2 + delta^2
    axis    |g|^q / q                       (q >= 2 or delta == 0)
            ((g^2+delta^2)^(q/2) - delta^q) / q   otherwise
"""

from __future__ import annotations

import numpy as np

from .grid import diff_adjoint_array, diff_array


def _safe_pow(s: np.ndarray, e: float) -> np.ndarray:
    if e >= 0:
        return s**e
    out = np.zeros_like(s)
    nz = s > 0
    out[nz] = s[nz] ** e
    return out


def smoothed_power(g2, s, r, delta):
    """``s^(r/2) - delta^r`` with ``s = g2 + delta^2``, free of cancellation."""
    if delta == 0.0:
        return s ** (0.5 * r)
    return delta**r * np.expm1(0.5 * r * np.log1p(g2 / (delta * delta)))


def fluxes(u, h, exps, n1, delta):
    N = u.ndim
    terms = np.zeros(1 + N - n1)
    flux = [None] * N
    if n1 > 0:
        r = float(exps[0])
        gs = [diff_array(u, i, h[i]) for i in range(n1)]
        g2 = sum(g * g for g in gs)
        s = g2 + delta * delta
        terms[0] = np.sum(smoothed_power(g2, s, r, delta)) / r
        w = _safe_pow(s, 0.5 * (r - 2.0))
        for i in range(n1):
            flux[i] = w * gs[i]
    for j, i in enumerate(range(n1, N)):
        q = float(exps[i])
        g = diff_array(u, i, h[i])
        if q >= 2.0 or delta == 0.0:
            a = np.abs(g)
            terms[1 + j] = np.sum(a**q) / q
            flux[i] = _safe_pow(a, q - 2.0) * g
        else:
            s = g * g + delta * delta
            terms[1 + j] = np.sum(smoothed_power(g * g, s, q, delta)) / q
            flux[i] = s ** (0.5 * (q - 2.0)) * g
    return terms, flux


def energy_flux(u, h, exps, n1, delta, want_grad=True):
    u = np.ascontiguousarray(u, dtype=float)
    terms, flux = fluxes(u, h, exps, n1, delta)
    if not want_grad:
        return terms, None
    grad = np.zeros_like(u)
    for i in range(u.ndim):
        grad += diff_adjoint_array(flux[i], i, h[i])
    return terms, grad
