"""The eps -> 0 continuation driver.

At each eps of the schedule the regularized problem is solved warm-started
from the previous field.  The extremal is then renormalized by the
anisotropic dilation

    v(x) = t * u(y + t^alpha * x),   alpha_i = p*_eps / p_i^eps - 1,

which preserves every norm entering the energy and the constraint.  ``(t, y)``
is chosen so the ellipse ``E(y, t^alpha)`` holds half of the mass
``|u|^p*_eps``, i.e. after the dilation the unit ball at the origin holds
half the mass.  Concentration is monitored through tail masses outside
``|x| > R`` and peak masses in small balls.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import fft as sfft
from scipy import ndimage, signal

from .errors import AnisoSobError, BisectionFailed, NegativeValues
from .exponents import EpsilonExponents, ExponentVector, epsilon_exponents
from .functional import energy_density, limit_energy
from .grid import Field, Grid, diff_array, grad1_mag, lp_norm
from .solver import ExtremalResult, SolverOptions, gaussian_init, minimize

log = logging.getLogger(__name__)

LEVY_TARGET = 0.5
FFT_WORKERS = 1


# -- mass diagnostics ---------------------------------------------------------


def node_mass(u: Field, q: float) -> np.ndarray:
    return np.abs(u.values) ** q * u.grid.cell_volume


def _ellipse_stencil(grid: Grid, semi_axes: Sequence[float]) -> np.ndarray:
    half = []
    for a, h, n in zip(semi_axes, grid.spacings, grid.counts):
        half.append(int(min(math.floor(a / h + 1e-9), n - 1)))
    offs = np.meshgrid(
        *[np.arange(-k, k + 1) * h for k, h in zip(half, grid.spacings)],
        indexing="ij",
        sparse=True,
    )
    return (sum((o / a) ** 2 for o, a in zip(offs, semi_axes)) <= 1.0 + 1e-12).astype(float)


def ellipse_masses(mass: np.ndarray, grid: Grid, semi_axes: Sequence[float]) -> np.ndarray:
    """Mass inside ``E(y, semi_axes)`` for every node ``y``."""
    st = _ellipse_stencil(grid, semi_axes)
    if st.size == 1:
        return mass.copy()
    with sfft.set_workers(FFT_WORKERS):
        out = signal.fftconvolve(mass, st, mode="same")
    # FFT noise would break exact ties between centers
    return np.round(out, 12)


def ball_masses(mass: np.ndarray, grid: Grid, r: float) -> np.ndarray:
    return ellipse_masses(mass, grid, [r] * grid.N)


def centered_ball_mass(u: Field, q: float, r: float = 1.0) -> float:
    inside = u.grid.radius() <= r + 1e-12
    return float(np.sum(node_mass(u, q)[inside]))


def tail_mass(u: Field, q: float, R: float) -> float:
    outside = u.grid.radius() > R
    return float(np.sum(node_mass(u, q)[outside]))


def tail_energy(u: Field, ee: EpsilonExponents, R: float, delta: float = 0.0) -> float:
    outside = u.grid.radius() > R
    return float(np.sum(energy_density(u, ee, delta)[outside]) * u.grid.cell_volume)


def peak_ball_mass(u: Field, q: float, r: float) -> float:
    return float(ball_masses(node_mass(u, q), u.grid, r).max())


# -- normalization ------------------------------------------------------------


def levy_t_and_center(
    u: Field,
    ee: EpsilonExponents,
    tol: float = 1e-2,
    norm_tol: float = 1e-6,
    max_iter: int = 200,
) -> tuple[float, tuple[float, ...]]:
    """Scale ``t`` and center ``y`` with ``sup_y mass(E(y, t^alpha)) = 1/2``.

    ``y`` is the first maximizing node in row-major order.  ``t = 1`` is kept
    when it already meets the target.
    """
    q = ee.p_star_eps
    n = lp_norm(u, q)
    if abs(n - 1.0) > norm_tol:
        raise BisectionFailed(f"field not normalized: |u|_q = {n}")
    alpha = ee.alpha
    mass = node_mass(u, q)
    grid = u.grid

    def Q(t: float) -> tuple[float, int]:
        em = ellipse_masses(mass, grid, [t**a for a in alpha])
        k = int(np.argmax(em))
        return float(em.flat[k]), k

    def center(k: int) -> tuple[float, ...]:
        idx = np.unravel_index(k, grid.counts)
        return tuple(float(grid.axes[i][idx[i]]) for i in range(grid.N))

    q1, k1 = Q(1.0)
    if abs(q1 - LEVY_TARGET) <= tol:
        return 1.0, center(k1)
    # log-t bracket: below every spacing / beyond the box diagonal
    hmin = min(grid.spacings)
    diam = 2.0 * math.hypot(*grid.half_lengths)
    lo_t = min(hmin ** (1.0 / a) for a in alpha) * 0.5
    hi_t = max(diam ** (1.0 / a) for a in alpha) * 2.0
    if q1 < LEVY_TARGET:
        lo, hi = 0.0, math.log(hi_t)
    else:
        lo, hi = math.log(lo_t), 0.0
    qlo, _ = Q(math.exp(lo))
    qhi, _ = Q(math.exp(hi))
    if not (qlo <= LEVY_TARGET <= qhi):
        raise BisectionFailed(f"target 1/2 not bracketed: Q in [{qlo:.4g}, {qhi:.4g}]")
    best = None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        qm, km = Q(math.exp(mid))
        if best is None or abs(qm - LEVY_TARGET) < abs(best[1] - LEVY_TARGET):
            best = (mid, qm, km)
        if abs(qm - LEVY_TARGET) <= tol:
            break
        if qm < LEVY_TARGET:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    mid, qm, km = best
    if abs(qm - LEVY_TARGET) > tol:
        log.warning("Levy bisection reached |Q - 1/2| = %.3g > %.3g", abs(qm - LEVY_TARGET), tol)
    return math.exp(mid), center(km)


def rescale(u: Field, t: float, y: Sequence[float], ee: EpsilonExponents) -> Field:
    """``v(x) = t * u(y + t^alpha x)`` by multilinear interpolation, renormalized."""
    if not t > 0:
        raise ValueError("t must be > 0")
    grid = u.grid
    alpha = ee.alpha
    xs = grid.coords()
    idx = []
    for i in range(grid.N):
        xi = y[i] + t ** alpha[i] * xs[i]
        idx.append((xi + grid.half_lengths[i]) / grid.spacings[i])
    coords = np.array(np.broadcast_arrays(*idx))
    vals = t * ndimage.map_coordinates(u.values, coords, order=1, mode="constant", cval=0.0)
    v = Field(grid, vals)
    v.zero_boundary()
    n = lp_norm(v, ee.p_star_eps)
    if n > 0:
        v.values /= n
    return v


def power_transform(u: Field, lam: float) -> Field:
    if lam < 1:
        raise ValueError(f"lambda must be >= 1, got {lam}")
    if np.any(u.values < 0):
        raise NegativeValues("power transform needs a nonnegative field")
    return Field(u.grid, u.values**lam)


def normalize_concentration(
    u: Field, ee: EpsilonExponents, tol: float = 1e-2
) -> tuple[Field, float, tuple[float, ...]]:
    """Levy search followed by :func:`rescale`.

    The node search fixes the center and a first ``t``; ``t`` is then refined
    against the unit-ball mass of the interpolated field, which increases
    continuously with ``t``.  When a single node already carries more than
    half of the mass the node search cannot bracket 1/2, and the refinement
    starts from the heaviest node with ``t = 1``.
    """
    q = ee.p_star_eps
    mass = node_mass(u, q)
    if mass.max() > LEVY_TARGET:
        k = int(np.argmax(mass))
        idx = np.unravel_index(k, u.grid.counts)
        y = tuple(float(u.grid.axes[i][idx[i]]) for i in range(u.grid.N))
        t = 1.0
    else:
        t, y = levy_t_and_center(u, ee, tol=tol)

    def m(log_t: float) -> tuple[float, Field]:
        v = rescale(u, math.exp(log_t), y, ee)
        return centered_ball_mass(v, q), v

    goal = 0.25 * tol
    lt = math.log(t)
    mt, v = m(lt)
    if abs(mt - LEVY_TARGET) <= goal:
        return v, t, y
    lo = hi = lt
    if mt > LEVY_TARGET:
        for _ in range(60):
            lo -= 1.0
            ml, vl = m(lo)
            if ml <= LEVY_TARGET:
                break
        else:
            raise BisectionFailed("rescaled unit-ball mass stays above 1/2")
    else:
        for _ in range(60):
            hi += 1.0
            mh, vh = m(hi)
            if mh >= LEVY_TARGET:
                break
        else:
            raise BisectionFailed("rescaled unit-ball mass stays below 1/2")
    best = (abs(mt - LEVY_TARGET), lt, v)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        mm, vm = m(mid)
        if abs(mm - LEVY_TARGET) < best[0]:
            best = (abs(mm - LEVY_TARGET), mid, vm)
        if best[0] <= goal or hi - lo < 1e-12:
            break
        if mm < LEVY_TARGET:
            lo = mid
        else:
            hi = mid
    err, lt, v = best
    if err > tol:
        raise BisectionFailed(f"unit-ball mass off target by {err:.3g} after refinement")
    return v, math.exp(lt), y


# -- driver -------------------------------------------------------------------


@dataclass
class ContinuationConfig:
    x: ExponentVector
    grid: Grid
    schedule: list[float]
    solver: SolverOptions = field(default_factory=SolverOptions)
    tail_radii: list[float] = field(default_factory=list)
    ball_radii: list[float] = field(default_factory=list)
    rescale_every: int = 1
    init: Field | None = None

    def __post_init__(self):
        if not self.schedule:
            raise ValueError("empty schedule")
        if self.rescale_every < 0:
            raise ValueError("rescale_every must be >= 0")


@dataclass
class StepRecord:
    eps: float
    p_star_eps: float
    p_plus_eps: float
    lambda_eps: float
    K_eps: float = math.nan
    l_eps: float = math.nan
    residual: float = math.nan
    iters: int = 0
    converged: bool = False
    failed: bool = False
    error: str = ""
    grad1_norm: float = math.nan
    axis_norms: list[float] = field(default_factory=list)
    lambda_power_norms: list[float] = field(default_factory=list)
    bv_norm: float = math.nan
    rescaled: bool = False
    levy_t: float = 1.0
    levy_center: list[float] = field(default_factory=list)
    unit_ball_mass: float = math.nan
    max_unit_ball_mass: float = math.nan
    tail_mass: list[float] = field(default_factory=list)
    tail_energy: list[float] = field(default_factory=list)
    peak_ball_mass: list[float] = field(default_factory=list)
    sup_norm: float = math.nan


@dataclass
class ContinuationTrace:
    records: list[StepRecord]
    tail_radii: list[float]
    ball_radii: list[float]
    final_extremal: Field | None = None
    final_rescaled: Field | None = None
    final_result: ExtremalResult | None = None
    final_limit_energy: float = math.nan
    final_limit_energy_power: float = math.nan

    @property
    def ok(self) -> bool:
        return not any(r.failed for r in self.records)


def _power_norms(v: Field, ee: EpsilonExponents, x: ExponentVector) -> tuple[list[float], float]:
    w = power_transform(v, ee.lambda_eps)
    vol = v.grid.cell_volume
    h = v.grid.spacings
    parts = []
    bv = 0.0
    if x.N1:
        tv = float(np.sum(grad1_mag(w, x.N1).values) * vol)
        parts.append(tv)
        bv += tv
    for i in range(x.N1, x.N):
        d = diff_array(w.values, i, h[i])
        integral = float(np.sum(np.abs(d) ** x.p[i]) * vol)
        parts.append(integral)
        bv += integral ** (1.0 / x.p[i])
    return parts, bv


def _diagnose(rec: StepRecord, v: Field, ee: EpsilonExponents, cfg: ContinuationConfig) -> None:
    q = ee.p_star_eps
    h = v.grid.spacings
    vol = v.grid.cell_volume
    exps = ee.axis_exponents
    if ee.N1:
        s = sum(diff_array(v.values, i, h[i]) ** 2 for i in range(ee.N1))
        rec.grad1_norm = float(np.sum(s ** (0.5 * exps[0])) * vol)
    rec.axis_norms = [
        float(np.sum(np.abs(diff_array(v.values, i, h[i])) ** exps[i]) * vol)
        for i in range(ee.N1, ee.N)
    ]
    rec.lambda_power_norms, rec.bv_norm = _power_norms(v, ee, cfg.x)
    mass = node_mass(v, q)
    rec.unit_ball_mass = centered_ball_mass(v, q)
    rec.max_unit_ball_mass = float(ball_masses(mass, v.grid, 1.0).max())
    rec.tail_mass = [tail_mass(v, q, R) for R in cfg.tail_radii]
    rec.tail_energy = [tail_energy(v, ee, R) for R in cfg.tail_radii]
    rec.peak_ball_mass = [float(ball_masses(mass, v.grid, r).max()) for r in cfg.ball_radii]
    rec.sup_norm = float(np.max(v.values))


def run(cfg: ContinuationConfig) -> ContinuationTrace:
    x = cfg.x
    first = epsilon_exponents(x, cfg.schedule[0])
    u = cfg.init if cfg.init is not None else gaussian_init(cfg.grid, first.p_star_eps)
    trace = ContinuationTrace([], list(cfg.tail_radii), list(cfg.ball_radii))
    last_res = None
    last_u = None
    for k, eps in enumerate(cfg.schedule):
        ee = epsilon_exponents(x, eps)
        rec = StepRecord(eps, ee.p_star_eps, ee.p_plus_eps, ee.lambda_eps)
        try:
            res = minimize(u, ee, cfg.solver)
            rec.K_eps, rec.l_eps, rec.residual = res.K_eps, res.l_eps, res.residual
            rec.iters, rec.converged = res.iters, res.converged
            v = res.u
            if cfg.rescale_every and (k + 1) % cfg.rescale_every == 0:
                v, t, y = normalize_concentration(res.u, ee)
                rec.rescaled, rec.levy_t, rec.levy_center = True, t, list(y)
            _diagnose(rec, v, ee, cfg)
        except AnisoSobError as exc:
            rec.failed, rec.error = True, f"{type(exc).__name__}: {exc}"
            log.warning("eps = %g failed: %s", eps, rec.error)
            trace.records.append(rec)
            continue
        log.info(
            "eps=%g K=%.6g l/K=%.4f res=%.2e iters=%d conv=%s",
            eps, rec.K_eps, rec.l_eps / rec.K_eps, rec.residual, rec.iters, rec.converged,
        )
        trace.records.append(rec)
        last_res, last_u, last_ee = res, v, ee
        u = v
    if last_res is not None:
        trace.final_extremal = last_res.u
        trace.final_rescaled = last_u
        trace.final_result = last_res
        trace.final_limit_energy = limit_energy(last_res.u, x).total
        w = power_transform(last_u, last_ee.lambda_eps)
        trace.final_limit_energy_power = limit_energy(w, x).total
    return trace


# -- serialization ------------------------------------------------------------

SCALAR_COLUMNS = [
    "eps", "p_star_eps", "p_plus_eps", "lambda_eps", "K_eps", "l_eps", "residual",
    "iters", "converged", "failed", "grad1_norm", "bv_norm", "rescaled", "levy_t",
    "unit_ball_mass", "max_unit_ball_mass", "sup_norm",
]


def trace_columns(trace: ContinuationTrace, N: int, n_axes: int, n_power: int) -> list[str]:
    cols = list(SCALAR_COLUMNS)
    cols += [f"levy_center_{i}" for i in range(N)]
    cols += [f"axis_norm_{i}" for i in range(n_axes)]
    cols += [f"lambda_power_norm_{i}" for i in range(n_power)]
    cols += [f"tail_mass_{j}" for j in range(len(trace.tail_radii))]
    cols += [f"tail_energy_{j}" for j in range(len(trace.tail_radii))]
    cols += [f"peak_ball_mass_{j}" for j in range(len(trace.ball_radii))]
    return cols


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    return f"{float(v):.17g}"


def write_trace_csv(trace: ContinuationTrace, x: ExponentVector, path: str | Path) -> None:
    n_axes = x.N - x.N1
    n_power = n_axes + (1 if x.N1 else 0)
    cols = trace_columns(trace, x.N, n_axes, n_power)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in trace.records:
            d = asdict(r)
            row = [_fmt(d[c]) for c in SCALAR_COLUMNS]

            def pad(vals, n):
                vals = list(vals)
                return [_fmt(v) for v in vals] + ["nan"] * (n - len(vals))

            row += pad(r.levy_center, x.N)
            row += pad(r.axis_norms, n_axes)
            row += pad(r.lambda_power_norms, n_power)
            row += pad(r.tail_mass, len(trace.tail_radii))
            row += pad(r.tail_energy, len(trace.tail_radii))
            row += pad(r.peak_ball_mass, len(trace.ball_radii))
            w.writerow(row)


def trace_summary(trace: ContinuationTrace) -> dict:
    recs = [asdict(r) for r in trace.records]
    return {
        "steps": len(recs),
        "failed_steps": [r["eps"] for r in recs if r["failed"]],
        "tail_radii": trace.tail_radii,
        "ball_radii": trace.ball_radii,
        "final_limit_energy": trace.final_limit_energy,
        "final_limit_energy_power": trace.final_limit_energy_power,
        "records": recs,
    }


def write_summary_json(summary: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")
