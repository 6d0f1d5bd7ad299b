"""Exponent algebra for the anisotropic critical embedding.

The unit exponents always come first: an :class:`ExponentVector` built from
an arbitrary ordering records the permutation that sorts it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    BadTail,
    DenominatorNonpositive,
    EmptySchedule,
    EpsilonTooLarge,
    SupercriticalExponent,
)

_LD = np.longdouble


@dataclass(frozen=True)
class ExponentVector:
    N: int
    N1: int
    p: tuple[float, ...]
    p_star: float
    p_plus: float
    # perm[j] is the original coordinate stored at position j
    perm: tuple[int, ...] = field(default=())

    @property
    def p_tail(self) -> tuple[float, ...]:
        return self.p[self.N1:]


@dataclass(frozen=True)
class EpsilonExponents:
    """Exponents of the regularized problem at level ``eps``.

    ``a``, ``eps_i`` and ``p_eps`` are indexed over the non-unit directions
    only; ``axis_exponents`` gives the full per-axis vector.
    """

    N: int
    N1: int
    eps: float
    a: tuple[float, ...]
    eps_i: tuple[float, ...]
    p_eps: tuple[float, ...]
    one_dir_exponent: float
    p_star_eps: float
    lambda_eps: float
    p_plus_eps: float

    @property
    def axis_exponents(self) -> tuple[float, ...]:
        return (self.one_dir_exponent,) * self.N1 + tuple(self.p_eps)

    @property
    def alpha(self) -> tuple[float, ...]:
        """Anisotropic scaling powers ``p*_eps / p_i^eps - 1``."""
        return tuple(self.p_star_eps / q - 1.0 for q in self.axis_exponents)


def derive_exponents(N: int, N1: int, p_tail: Sequence[float]) -> ExponentVector:
    N, N1 = int(N), int(N1)
    p_tail = [float(q) for q in p_tail]
    if N < 2:
        raise ValueError(f"dimension N must be >= 2, got {N}")
    if not 0 <= N1 <= N:
        raise ValueError(f"N1 must lie in [0, N], got {N1}")
    if len(p_tail) != N - N1:
        raise ValueError(f"expected {N - N1} tail exponents, got {len(p_tail)}")
    for q in p_tail:
        if not q > 1.0 or not math.isfinite(q):
            raise BadTail(f"tail exponent {q} must be a finite real > 1")
    denom = _LD(N1) + sum((_LD(1) / _LD(q) for q in p_tail), _LD(0)) - _LD(1)
    if denom <= 0:
        raise DenominatorNonpositive(
            f"N1 + sum 1/p_i - 1 = {float(denom)} <= 0: no critical exponent"
        )
    p_star = float(_LD(N) / denom)
    p_plus = max([1.0] * N1 + p_tail)
    if p_plus >= p_star:
        raise SupercriticalExponent(
            f"SupercriticalExponent: p_plus = {p_plus} >= p_star = {p_star}"
        )
    p = (1.0,) * N1 + tuple(p_tail)
    return ExponentVector(N, N1, p, p_star, p_plus, tuple(range(N)))


def exponent_vector(p: Sequence[float]) -> ExponentVector:
    """Build an :class:`ExponentVector` from exponents in any coordinate order."""
    p = [float(q) for q in p]
    for q in p:
        if q < 1.0:
            raise BadTail(f"exponent {q} < 1")
    perm = sorted(range(len(p)), key=lambda i: (p[i] != 1.0, i))
    N1 = sum(1 for q in p if q == 1.0)
    x = derive_exponents(len(p), N1, [p[i] for i in perm[N1:]])
    return ExponentVector(x.N, x.N1, x.p, x.p_star, x.p_plus, tuple(perm))


def epsilon_exponents(x: ExponentVector, eps: float) -> EpsilonExponents:
    e = _LD(eps)
    if not e > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    a, eps_i, p_eps = [], [], []
    for q in x.p_tail:
        pq = _LD(q)
        den = 1 - e * (pq - 1)
        if den <= 0:
            raise EpsilonTooLarge(f"eps = {eps}: 1 - eps(p_i - 1) = {float(den)} <= 0")
        ai = (pq - 1) * pq * e * e / den
        ei = pq * e + ai
        a.append(ai)
        eps_i.append(ei)
        p_eps.append(pq * (1 + ei))
    N = _LD(x.N)
    inv = N / _LD(x.p_star) - e * N / (1 + e)
    if inv <= 0:
        raise EpsilonTooLarge(f"eps = {eps}: N / p*_eps = {float(inv)} <= 0")
    p_star_eps = N / inv
    lam = p_star_eps * e / (1 + e) + 1
    p_plus_eps = max([1 + e] * x.N1 + p_eps)
    if p_plus_eps >= p_star_eps:
        raise EpsilonTooLarge(
            f"eps = {eps}: p+_eps = {float(p_plus_eps)} >= p*_eps = {float(p_star_eps)}"
        )
    return EpsilonExponents(
        N=x.N,
        N1=x.N1,
        eps=float(eps),
        a=tuple(float(v) for v in a),
        eps_i=tuple(float(v) for v in eps_i),
        p_eps=tuple(float(v) for v in p_eps),
        one_dir_exponent=float(1 + e),
        p_star_eps=float(p_star_eps),
        lambda_eps=float(lam),
        p_plus_eps=float(p_plus_eps),
    )


def exact_exponents(x: ExponentVector) -> EpsilonExponents:
    """Unregularized exponents (eps = 0), used for the limiting functional."""
    return EpsilonExponents(
        N=x.N,
        N1=x.N1,
        eps=0.0,
        a=(0.0,) * (x.N - x.N1),
        eps_i=(0.0,) * (x.N - x.N1),
        p_eps=tuple(x.p_tail),
        one_dir_exponent=1.0,
        p_star_eps=x.p_star,
        lambda_eps=1.0,
        p_plus_eps=x.p_plus,
    )


def fixed_exponents(p: Sequence[float], q: float) -> EpsilonExponents:
    """Exponents with no unit directions and an arbitrary constraint exponent.

    ``fixed_exponents([2, 2, 2], 2)`` is the linear eigenvalue problem of the
    discrete Dirichlet Laplacian; it does not satisfy the critical relations.
    """
    p = tuple(float(v) for v in p)
    return EpsilonExponents(
        N=len(p),
        N1=0,
        eps=0.0,
        a=(0.0,) * len(p),
        eps_i=(0.0,) * len(p),
        p_eps=p,
        one_dir_exponent=1.0,
        p_star_eps=float(q),
        lambda_eps=1.0,
        p_plus_eps=max(p),
    )


def is_admissible(x: ExponentVector, eps: float) -> bool:
    try:
        epsilon_exponents(x, eps)
    except EpsilonTooLarge:
        return False
    return True


def epsilon_schedule(
    eps0: float, factor: float, eps_min: float, x: ExponentVector | None = None
) -> list[float]:
    """Geometric schedule ``eps0, eps0*factor, ...`` down to ``eps_min``.

    With ``x`` given, leading entries that are not admissible for ``x`` are
    dropped.
    """
    if not (eps0 > 0 and eps_min > 0 and eps0 > eps_min):
        raise EmptySchedule(f"need eps0 > eps_min > 0, got eps0={eps0}, eps_min={eps_min}")
    if not 0 < factor < 1:
        raise ValueError(f"factor must lie in (0, 1), got {factor}")
    out = []
    e = float(eps0)
    # relative slack so 0.4 * 0.5**3 = 0.05 is kept against eps_min = 0.05
    while e >= eps_min * (1 - 1e-12):
        out.append(e)
        e *= factor
    if x is not None:
        while out and not is_admissible(x, out[0]):
            out.pop(0)
    if not out:
        raise EmptySchedule("no admissible eps in schedule")
    return out
