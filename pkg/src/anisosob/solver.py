"""Minimization of the regularized energy on the unit ``L^q`` sphere, ``q = p*_eps``.

The default method runs L-BFGS-B (scipy) on the scale-invariant function
``F(w) = E(w / |w|_q)`` of the interior node values, with ``w >= 0`` as box
bounds.  Its gradient is ``vol / |w|_q`` times the tangential gradient below,
so stationary points of ``F`` are exactly the constrained critical points.

The ``"projected"`` method is a preconditioned projected gradient descent;
one iteration::

    g_t   = grad E(u) - l(u) * |u|^(q-2) u        (multiplier part removed)
    u_new = P(u - eta * g_t)                       (clamp >= 0, rescale |.|_q = 1)

``eta`` starts from a Barzilai-Borwein estimate and is backtracked until the
projected point passes an Armijo test, so the reported energy never
increases.  ``l(u) = <grad E(u), u>`` is the discrete Lagrange multiplier;
at a constrained critical point ``g_t`` vanishes and
``grad E(u) = l |u|^(q-2) u`` on the interior nodes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .errors import NotNormalized, ZeroInit
from .exponents import EpsilonExponents
from .functional import EnergyBreakdown, energy_and_gradient, hessian_diagonal
from .grid import Field, Grid, lp_norm

log = logging.getLogger(__name__)


@dataclass
class SolverOptions:
    max_iters: int = 10000
    step0: float = 0.5
    armijo_c: float = 1e-4
    shrink: float = 0.5
    tol_energy: float = 1e-9
    tol_residual: float = 1e-6
    delta: float = 1e-4
    enforce_nonneg: bool = True
    window: int = 10
    delta_floor: float = 1e-8
    max_backtracks: int = 40
    precondition: bool = True
    method: str = "lbfgs"
    memory: int = 20

    def __post_init__(self):
        if self.method not in ("lbfgs", "projected"):
            raise ValueError(f"unknown method {self.method!r}")
        for name in ("step0", "tol_energy", "tol_residual"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not 0 < self.armijo_c < 1 or not 0 < self.shrink < 1:
            raise ValueError("armijo_c and shrink must lie in (0, 1)")
        if self.delta < 0 or self.max_iters < 0:
            raise ValueError("delta and max_iters must be >= 0")


@dataclass
class ExtremalResult:
    u: Field
    K_eps: float
    l_eps: float
    residual: float
    breakdown: EnergyBreakdown
    iters: int
    converged: bool
    delta: float
    energies: list[float] = field(default_factory=list, repr=False)


def gaussian_init(grid: Grid, q: float, width: float = 0.3) -> Field:
    """Anisotropic Gaussian scaled to the box, unit ``L^q`` norm."""
    L = grid.half_lengths
    u = grid.sample(
        lambda *xs: np.exp(-sum((x / (width * Li)) ** 2 for x, Li in zip(xs, L)))
    )
    return normalize(u, q)


def normalize(u: Field, q: float) -> Field:
    n = lp_norm(u, q)
    if n == 0.0:
        raise ZeroInit("cannot normalize the zero field")
    return Field(u.grid, u.values / n)


def _signed_pow(v: np.ndarray, e: float) -> np.ndarray:
    if e == 1.0:
        return v.copy()
    return np.sign(v) * np.abs(v) ** e


def _multiplier_from(grad: Field, u: Field) -> float:
    return float(np.vdot(grad.values, u.values) * u.grid.cell_volume)


def _residual_from(grad: Field, u: Field, l: float, q: float, margin: int = 1) -> float:
    mask = u.grid.interior_mask(margin)
    rhs = l * _signed_pow(u.values[mask], q - 1.0)
    den = np.linalg.norm(rhs)
    num = np.linalg.norm(grad.values[mask] - rhs)
    if den == 0.0:
        return float("inf") if num > 0 else 0.0
    return float(num / den)


def multiplier(u: Field, ee: EpsilonExponents, delta: float, tol: float = 1e-8) -> float:
    """``<grad E(u), u>``, i.e. the pairing ``int sigma . D u``.

    Equals the Lagrange multiplier of an exact discrete extremal.
    """
    n = lp_norm(u, ee.p_star_eps)
    if abs(n - 1.0) > tol:
        raise NotNormalized(f"|u|_q = {n!r}, expected 1")
    _, g = energy_and_gradient(u, ee, delta)
    return _multiplier_from(g, u)


def el_residual(
    u: Field, l: float, ee: EpsilonExponents, delta: float, margin: int = 1
) -> float:
    """Relative interior L2 residual of ``grad E(u) = l |u|^(q-2) u``.

    ``margin`` is the number of node layers excluded at each face.
    """
    _, g = energy_and_gradient(u, ee, delta)
    return _residual_from(g, u, l, ee.p_star_eps, margin)


class _Problem:
    def __init__(self, ee: EpsilonExponents, opts: SolverOptions, grid: Grid):
        self.ee = ee
        self.q = ee.p_star_eps
        self.opts = opts
        self.delta = opts.delta
        self.vol = grid.cell_volume
        self.interior = grid.interior_mask()

    def project(self, v: np.ndarray) -> np.ndarray | None:
        if self.opts.enforce_nonneg:
            v = np.maximum(v, 0.0)
        n = (np.sum(np.abs(v) ** self.q) * self.vol) ** (1.0 / self.q)
        if not n > 0 or not np.isfinite(n):
            return None
        return v / n

    def evaluate(self, u: Field):
        br, g = energy_and_gradient(u, self.ee, self.delta)
        g.values[~self.interior] = 0.0
        l = _multiplier_from(g, u)
        tang = g.values - l * _signed_pow(u.values, self.q - 1.0)
        tang[~self.interior] = 0.0
        if self.opts.enforce_nonneg:
            # nodes pinned at zero with an outward-pointing gradient are inactive
            tang[(u.values <= 0.0) & (tang > 0.0)] = 0.0
        res = _residual_from(g, u, l, self.q)
        if self.opts.precondition:
            d = hessian_diagonal(u, self.ee, self.delta)
            d = np.maximum(d, 1e-2 * float(d[self.interior].mean()))
            direc = tang / d
        else:
            d = None
            direc = tang
        return br, g, l, tang, res, d, direc


def minimize(init: Field, ee: EpsilonExponents, opts: SolverOptions | None = None) -> ExtremalResult:
    """Constrained minimizer of the regularized energy started from ``init``.

    Stops when the Euler-Lagrange residual is below ``tol_residual`` and the
    relative energy drop over the last ``window`` iterations is below
    ``tol_energy`` per iteration.  If the iteration stalls above the residual
    tolerance, ``delta`` is halved (down to ``delta_floor``) and the run
    resumes from the current point.
    """
    opts = opts or SolverOptions()
    if opts.method == "lbfgs":
        return _minimize_lbfgs(init, ee, opts)
    return _minimize_projected(init, ee, opts)


def _converged(res: float, energies: list[float], opts: SolverOptions) -> bool:
    if res >= opts.tol_residual:
        return False
    if len(energies) < 2:
        return True
    w = min(opts.window, len(energies) - 1)
    drop = energies[-1 - w] - energies[-1]
    return drop <= opts.tol_energy * max(abs(energies[-1]), 1e-300) * w


def _minimize_lbfgs(init: Field, ee: EpsilonExponents, opts: SolverOptions) -> ExtremalResult:
    grid = init.grid
    prob = _Problem(ee, opts, grid)
    inter = prob.interior
    q = prob.q
    vol = prob.vol
    w0 = np.where(inter, init.values, 0.0)
    if opts.enforce_nonneg:
        w0 = np.maximum(w0, 0.0)
    if prob.project(w0) is None:
        raise ZeroInit("initial field is zero after projection")
    state: dict = {}

    def evaluate(wi: np.ndarray):
        key = (prob.delta, wi.tobytes())
        if state.get("key") == key:
            return state
        full = np.zeros(grid.counts)
        full[inter] = wi
        n = float((np.sum(np.abs(full) ** q) * vol) ** (1.0 / q))
        if not n > 0 or not np.isfinite(n):
            raise ZeroInit("iterate collapsed to zero")
        u = Field(grid, full / n)
        br, g = energy_and_gradient(u, ee, prob.delta)
        g.values[~inter] = 0.0
        l = _multiplier_from(g, u)
        tang = g.values - l * _signed_pow(u.values, q - 1.0)
        state.update(key=key, u=u, br=br, l=l, n=n, tang=tang[inter],
                     res=_residual_from(g, u, l, q))
        return state

    def fun(wi):
        st = evaluate(wi)
        return st["br"].total, st["tang"] * (vol / st["n"])

    bounds = [(0.0, None)] * int(inter.sum()) if opts.enforce_nonneg else None
    wi = w0[inter]
    iters = 0
    converged = False
    energies: list[float] = []
    for _restart in range(50):
        st = evaluate(wi)
        energies = [st["br"].total]
        if _converged(st["res"], energies, opts) and iters == 0:
            converged = True
            break

        def callback(intermediate_result):
            nonlocal iters
            iters += 1
            s = evaluate(intermediate_result.x)
            energies.append(s["br"].total)
            if _converged(s["res"], energies, opts):
                raise StopIteration

        budget = opts.max_iters - iters
        if budget <= 0:
            break
        out = optimize.minimize(
            fun, wi, jac=True, method="L-BFGS-B", bounds=bounds, callback=callback,
            options=dict(maxiter=budget, maxfun=10 * budget + 100, maxcor=opts.memory,
                         ftol=1e-16, gtol=0.0),
        )
        wi = out.x
        st = evaluate(wi)
        if _converged(st["res"], energies, opts) or st["res"] < opts.tol_residual:
            converged = True
            break
        if iters >= opts.max_iters:
            break
        if st["res"] < 100.0 * opts.tol_residual:
            # L-BFGS-B stops once energy decrease hits rounding; a few
            # projected-gradient steps push the residual further
            pol = _minimize_projected(
                st["u"], ee, replace(opts, max_iters=min(1000, opts.max_iters - iters), delta=prob.delta)
            )
            iters += pol.iters
            energies.extend(pol.energies[1:])
            wi = pol.u.values[inter]
            prob.delta = pol.delta
            if pol.converged:
                converged = True
                break
            if pol.residual >= st["res"] and prob.delta <= opts.delta_floor:
                # rounding floor: neither method can lower the residual
                break
            continue
        if prob.delta > opts.delta_floor and prob.delta > 0:
            prob.delta = max(prob.delta * 0.5, opts.delta_floor)
            log.debug("L-BFGS-B stopped (%s) at iter %d; delta -> %g", out.message, iters, prob.delta)
            continue
        log.debug("L-BFGS-B stopped: %s", out.message)
        break

    st = evaluate(wi)
    return ExtremalResult(
        u=st["u"],
        K_eps=st["br"].total,
        l_eps=st["l"],
        residual=st["res"],
        breakdown=st["br"],
        iters=iters,
        converged=converged,
        delta=prob.delta,
        energies=energies,
    )


def _minimize_projected(init: Field, ee: EpsilonExponents, opts: SolverOptions) -> ExtremalResult:
    grid = init.grid
    prob = _Problem(ee, opts, grid)
    v0 = init.values.copy()
    v0[~prob.interior] = 0.0
    v = prob.project(v0)
    if v is None:
        raise ZeroInit("initial field is zero after projection")
    u = Field(grid, v)
    br, g, l, tang, res, dg, direc = prob.evaluate(u)
    energies = [br.total]
    eta = opts.step0
    prev = None
    converged = False
    it = 0

    while True:
        if _converged(res, energies, opts):
            converged = True
            break
        if it >= opts.max_iters:
            break
        if prev is not None:
            s = u.values - prev[0]
            y = tang - prev[1]
            sy = float(np.vdot(s, y))
            if sy > 0:
                ss = float(np.vdot(s, s * dg)) if dg is not None else float(np.vdot(s, s))
                eta = ss / sy
            else:
                eta = min(eta * 4.0, 1e6)
        accepted = None
        step = eta
        for _ in range(opts.max_backtracks):
            cand = prob.project(u.values - step * direc)
            if cand is not None:
                uc = Field(grid, cand)
                out = prob.evaluate(uc)
                dec = float(np.vdot(tang, cand - u.values)) * prob.vol
                if dec < 0:
                    ok = out[0].total <= br.total + opts.armijo_c * dec
                else:
                    ok = out[0].total < br.total
                # near a critical point the energy decrease drops below
                # rounding; then a smaller residual at no higher energy counts
                ok = ok or (out[0].total <= br.total and out[4] < res)
                if ok:
                    accepted = (uc, out, step)
                    break
            step *= opts.shrink
        if accepted is None:
            if res < opts.tol_residual:
                # no representable decrease left at a critical point
                converged = True
                break
            if prob.delta > opts.delta_floor and prob.delta > 0:
                prob.delta = max(prob.delta * 0.5, opts.delta_floor)
                log.debug("line search stalled at iter %d; delta -> %g", it, prob.delta)
                br, g, l, tang, res, dg, direc = prob.evaluate(u)
                energies = [br.total]
                prev = None
                eta = opts.step0
                it += 1
                continue
            log.debug("line search failed at iter %d", it)
            break
        prev = (u.values, tang)
        u, (br, g, l, tang, res, dg, direc), eta = accepted
        energies.append(br.total)
        it += 1

    return ExtremalResult(
        u=u,
        K_eps=br.total,
        l_eps=l,
        residual=res,
        breakdown=br,
        iters=it,
        converged=converged,
        delta=prob.delta,
        energies=energies,
    )
