"""Command line driver: ``anisosob solve|continue|verify|report``.

Runs are described by a YAML file; see ``configs/default.yaml``.  Unknown
keys are rejected.  ``ANISOSOB_OUT`` and ``ANISOSOB_THREADS`` override the
output directory and the FFT worker count when the matching flag is absent.

Exit codes: 0 success, 1 configuration or validation error (or a failed
verification check), 2 solver not converged or a continuation step failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import continuation, kernels
from .errors import AnisoSobError, ConfigError
from .exponents import (
    EpsilonExponents,
    ExponentVector,
    derive_exponents,
    epsilon_exponents,
    epsilon_schedule,
    fixed_exponents,
)
from .functional import energy, troisi_ratios
from .grid import Field, Grid, backward_div, diff_array, dump_field, load_field, make_grid
from .solver import SolverOptions, gaussian_init, minimize
from .verify import (
    Check,
    aftl_residual,
    gradient_check,
    refinement_order,
    write_report,
)

log = logging.getLogger("anisosob")

# -- configuration ------------------------------------------------------------

_SECTIONS = {
    "exponents": {"N", "N1", "p_tail", "q"},
    "grid": {"half_length", "counts"},
    "schedule": {"eps0", "factor", "eps_min"},
    "solve": {"eps", "init_width"},
    "solver": {f.name for f in fields(SolverOptions)},
    "diagnostics": {"tail_radii", "ball_radii", "tail_fraction", "rescale_every"},
    "verify": {"aftl_counts", "aftl_half_length", "aftl_min_order", "random_trials"},
    "output": {"dir"},
}
_TOP = set(_SECTIONS) | {"seed"}


@dataclass
class RunConfig:
    x: ExponentVector
    q: float | None
    grid: Grid
    schedule: list[float]
    solve_eps: float
    init_width: float
    solver: SolverOptions
    tail_radii: list[float]
    ball_radii: list[float]
    rescale_every: int
    verify: dict[str, Any] = field(default_factory=dict)
    out_dir: Path = Path("out")
    seed: int = 0

    def exponents_at(self, eps: float) -> EpsilonExponents:
        if self.q is not None:
            return fixed_exponents(self.x.p, self.q)
        return epsilon_exponents(self.x, eps)


def _per_axis(v, N: int, name: str) -> list:
    if isinstance(v, (int, float)):
        return [v] * N
    if isinstance(v, list) and len(v) == N:
        return v
    raise ConfigError(f"{name} must be a number or a list of {N} numbers")


def parse_config(data: Any) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(data) - _TOP
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    for sec, allowed in _SECTIONS.items():
        body = data.get(sec, {}) or {}
        if not isinstance(body, dict):
            raise ConfigError(f"section '{sec}' must be a mapping")
        bad = set(body) - allowed
        if bad:
            raise ConfigError(f"unknown keys in '{sec}': {sorted(bad)}")
        data[sec] = body

    ex = data["exponents"]
    if "N" not in ex or "p_tail" not in ex:
        raise ConfigError("exponents needs N and p_tail")
    q = ex.get("q")
    if q is not None:
        # fixed constraint exponent: no unit directions, no eps regularization
        if ex.get("N1", 0):
            raise ConfigError("exponents.q requires N1 = 0")
        fx = fixed_exponents(ex["p_tail"], float(q))
        x = ExponentVector(fx.N, 0, fx.p_eps, float(q), fx.p_plus_eps, tuple(range(fx.N)))
    else:
        x = derive_exponents(ex["N"], ex.get("N1", 0), ex["p_tail"])

    N = x.N
    g = data["grid"]
    grid = make_grid(
        [float(v) for v in _per_axis(g.get("half_length", 3.0), N, "grid.half_length")],
        [int(v) for v in _per_axis(g.get("counts", 33), N, "grid.counts")],
    )

    s = data["schedule"]
    eps0 = float(s.get("eps0", 0.4))
    schedule = epsilon_schedule(
        eps0, float(s.get("factor", 0.5)), float(s.get("eps_min", 0.0125)),
        None if q is not None else x,
    )
    sv = data["solve"]
    solve_eps = float(sv.get("eps", schedule[0]))
    try:
        solver = SolverOptions(**data["solver"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from None

    d = data["diagnostics"]
    frac = float(d.get("tail_fraction", 0.8))
    tail = [float(r) for r in d.get("tail_radii", [frac * min(grid.half_lengths)])]
    ball = [float(r) for r in d.get("ball_radii", [min(grid.spacings)])]
    for r in tail + ball:
        if not r > 0:
            raise ConfigError("diagnostic radii must be > 0")
    rescale_every = int(d.get("rescale_every", 1))
    if rescale_every < 0:
        raise ConfigError("rescale_every must be >= 0")

    cfg = RunConfig(
        x=x,
        q=float(q) if q is not None else None,
        grid=grid,
        schedule=schedule,
        solve_eps=solve_eps,
        init_width=float(sv.get("init_width", 0.3)),
        solver=solver,
        tail_radii=tail,
        ball_radii=ball,
        rescale_every=rescale_every,
        verify=dict(data["verify"]),
        out_dir=Path(data["output"].get("dir", "out")),
        seed=int(data.get("seed", 0)),
    )
    cfg.exponents_at(solve_eps)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    return parse_config(data)


# -- output helpers -----------------------------------------------------------


def _clean(o):
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (np.floating, float)):
        v = float(o)
        return float(f"{v:.17g}") if math.isfinite(v) else str(v)
    if isinstance(o, np.integer):
        return int(o)
    return o


def write_json(obj: dict, path: Path) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _out_dir(args, cfg: RunConfig | None) -> Path:
    if args.out:
        d = Path(args.out)
    elif os.environ.get("ANISOSOB_OUT"):
        d = Path(os.environ["ANISOSOB_OUT"])
    elif cfg is not None:
        d = cfg.out_dir
    else:
        d = Path("out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _threads(args) -> None:
    n = args.threads
    if n is None and os.environ.get("ANISOSOB_THREADS"):
        try:
            n = int(os.environ["ANISOSOB_THREADS"])
        except ValueError:
            raise ConfigError("ANISOSOB_THREADS must be an integer") from None
    if n is not None:
        if n < 1:
            raise ConfigError("thread count must be >= 1")
        continuation.FFT_WORKERS = n


# -- commands -----------------------------------------------------------------


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    _threads(args)
    out = _out_dir(args, cfg)
    ee = cfg.exponents_at(cfg.solve_eps)
    init = gaussian_init(cfg.grid, ee.p_star_eps, cfg.init_width)
    res = minimize(init, ee, cfg.solver)
    dump_field(res.u, out / "field.csv")
    write_json(
        {
            "eps": ee.eps,
            "p_star_eps": ee.p_star_eps,
            "K_eps": res.K_eps,
            "l_eps": res.l_eps,
            "residual": res.residual,
            "iters": res.iters,
            "converged": res.converged,
            "delta": res.delta,
            "breakdown": asdict(res.breakdown),
            "backend": kernels.BACKEND,
        },
        out / "result.json",
    )
    print(f"K_eps={res.K_eps:.10g} l_eps={res.l_eps:.10g} residual={res.residual:.3g} "
          f"iters={res.iters} converged={res.converged}")
    if not res.converged:
        print("NotConverged: iteration budget exhausted", file=sys.stderr)
        return 2
    return 0


def continuation_config(cfg: RunConfig) -> continuation.ContinuationConfig:
    if cfg.q is not None:
        raise ConfigError("continuation needs the critical exponents (drop exponents.q)")
    return continuation.ContinuationConfig(
        x=cfg.x,
        grid=cfg.grid,
        schedule=cfg.schedule,
        solver=cfg.solver,
        tail_radii=cfg.tail_radii,
        ball_radii=cfg.ball_radii,
        rescale_every=cfg.rescale_every,
        init=gaussian_init(cfg.grid, epsilon_exponents(cfg.x, cfg.schedule[0]).p_star_eps,
                           cfg.init_width),
    )


def cmd_continue(args) -> int:
    cfg = load_config(args.config)
    ccfg = continuation_config(cfg)
    _threads(args)
    out = _out_dir(args, cfg)
    trace = continuation.run(ccfg)
    continuation.write_trace_csv(trace, cfg.x, out / "trace.csv")
    continuation.write_summary_json(_clean(continuation.trace_summary(trace)), out / "summary.json")
    if trace.final_rescaled is not None:
        dump_field(trace.final_rescaled, out / "field.csv")
    for r in trace.records:
        status = "failed: " + r.error if r.failed else f"K={r.K_eps:.8g} conv={r.converged}"
        print(f"eps={r.eps:.6g} {status}")
    return 0 if trace.ok else 2


def _linear_oracle(n: int = 5) -> tuple[float, float]:
    """Solver value against the dense smallest eigenvalue of the Dirichlet Laplacian."""
    grid = make_grid([1.0] * 3, [n] * 3)
    ee = fixed_exponents([2, 2, 2], 2)
    res = minimize(gaussian_init(grid, 2.0), ee, SolverOptions(tol_residual=1e-10, tol_energy=1e-14))
    m = n - 2
    h = grid.spacings[0]
    t = (np.diag(2 * np.ones(m)) - np.diag(np.ones(m - 1), 1) - np.diag(np.ones(m - 1), -1)) / h**2
    eye = np.eye(m)
    A = np.kron(np.kron(t, eye), eye) + np.kron(np.kron(eye, t), eye) + np.kron(np.kron(eye, eye), t)
    lam = float(np.linalg.eigvalsh(A)[0])
    return res.K_eps, lam / 2.0


def verify_checks(cfg: RunConfig, fld: Field | None, saved: dict | None = None) -> list[Check]:
    rng = np.random.default_rng(cfg.seed)
    trials = int(cfg.verify.get("random_trials", 10))
    checks: list[Check] = []
    x = cfg.x

    if cfg.q is None:
        worst = 0.0
        for eps in cfg.schedule:
            ee = epsilon_exponents(x, eps)
            worst = max(worst, abs(ee.lambda_eps * x.p_star - ee.p_star_eps) / ee.p_star_eps)
            for q, ei in zip(x.p_tail, ee.eps_i):
                lhs = q * (1 + ei) / ei
                worst = max(worst, abs(lhs - (1 + eps) / eps) / lhs)
            rhs = x.N / x.p_star - eps * x.N / (1 + eps)
            worst = max(worst, abs(x.N / ee.p_star_eps - rhs) / abs(rhs))
        checks.append(Check("exponent_identities", worst <= 1e-12, worst, 1e-12))

    g = make_grid([1.0] * x.N, [7] * x.N)
    worst = 0.0
    for _ in range(trials):
        u = g.sample(lambda *xs: rng.standard_normal(g.counts))
        sig = [Field(g, rng.standard_normal(g.counts)) for _ in range(x.N)]
        pair = sum(float(np.vdot(s.values, diff_array(u.values, i, g.spacings[i])))
                   for i, s in enumerate(sig))
        div = float(np.vdot(backward_div(sig).values, u.values))
        scale = sum(float(np.abs(s.values).sum()) for s in sig) * float(np.abs(u.values).max())
        worst = max(worst, abs(pair + div) / scale)
    checks.append(Check("green_identity", worst <= 1e-13, worst, 1e-13))

    ee = cfg.exponents_at(cfg.solve_eps)
    worst = 0.0
    for _ in range(trials):
        u = g.sample(lambda *xs: rng.uniform(0.2, 1.0, g.counts))
        d = g.sample(lambda *xs: rng.standard_normal(g.counts)).values
        worst = max(worst, gradient_check(u, ee, cfg.solver.delta, d))
    checks.append(Check("gradient_fd", worst <= 1e-5, worst, 1e-5))

    if cfg.q is None:
        prod, total = troisi_ratios(gaussian_init(cfg.grid, x.p_star), x)
        checks.append(Check("troisi_product_positive", prod > 0, prod, 0.0))
        checks.append(Check("troisi_am_gm", total >= prod, total - prod, 0.0))

    K, ref = _linear_oracle()
    rel = abs(K - ref) / ref
    checks.append(Check("linear_oracle", rel <= 1e-6, rel, 1e-6))

    counts = cfg.verify.get("aftl_counts", [17, 33])
    if counts and x.N >= 3:
        L = float(cfg.verify.get("aftl_half_length", 3.0))
        res = [aftl_residual(make_grid([L] * x.N, [int(n)] * x.N), 1.0, 1.0, 2.0) for n in counts]
        order = min(refinement_order(res)) if len(res) > 1 else math.nan
        thr = float(cfg.verify.get("aftl_min_order", 0.8))
        checks.append(Check("aftl_refinement_order", order >= thr, order, thr,
                            "residuals " + ", ".join(f"{r:.4g}" for r in res)))

    if fld is not None:
        finite = bool(np.all(np.isfinite(fld.values)))
        checks.append(Check("field_finite", finite, float(np.sum(~np.isfinite(fld.values))), 0.0))
        if finite:
            ok_bd = fld.is_zero_boundary()
            checks.append(Check("field_zero_boundary", ok_bd, 0.0 if ok_bd else 1.0, 0.0))
            if fld.grid.N == x.N:
                ee_f = cfg.exponents_at(cfg.solve_eps)
                E = energy(fld, ee_f, cfg.solver.delta).total
                checks.append(Check("field_energy", math.isfinite(E), E, math.nan,
                                    f"energy at eps = {ee_f.eps:g}"))
                if saved is not None:
                    # same field, same delta: the stored constant must come back
                    E = energy(fld, ee_f, float(saved["delta"])).total
                    K = float(saved["K_eps"])
                    rel = abs(E - K) / max(abs(K), 1e-300)
                    checks.append(Check("field_energy_roundtrip", rel <= 1e-12, rel, 1e-12))
            else:
                checks.append(Check("field_dimension", False, fld.grid.N, x.N))
    return checks


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    _threads(args)
    out = _out_dir(args, cfg)
    fld = load_field(args.field) if args.field else None
    saved = None
    if args.field:
        side = Path(args.field).with_name("result.json")
        if side.is_file():
            saved = json.loads(side.read_text())
    checks = verify_checks(cfg, fld, saved)
    write_report(checks, out / "verify.json")
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name} value={c.value:.6g}")
    return 0 if all(c.passed for c in checks) else 1


def cmd_report(args) -> int:
    if args.trace:
        path = Path(args.trace)
    elif args.config:
        cfg = load_config(args.config)
        path = (Path(args.out) if args.out else cfg.out_dir) / "trace.csv"
    else:
        raise ConfigError("report needs --trace or --config")
    if not path.is_file():
        raise ConfigError(f"trace file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"trace file {path} has no rows")
    out = Path(args.out) if args.out else path.parent
    out.mkdir(parents=True, exist_ok=True)
    cols = list(rows[0])
    tails = [c for c in cols if c.startswith("tail_mass_")]
    series = {
        "series_K.csv": ["eps", "K_eps", "l_eps"],
        "series_tail_mass.csv": ["eps"] + tails,
        "series_sup_norm.csv": ["eps", "sup_norm"],
    }
    for name, keys in series.items():
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys)
            for r in rows:
                w.writerow([r[k] for k in keys])
    lines = [f"trace: {path}", f"steps: {len(rows)}"]
    lines.append(f"{'eps':>10} {'K_eps':>14} {'l/K':>8} {'residual':>10} {'sup':>8} conv failed")
    for r in rows:
        K, l = float(r["K_eps"]), float(r["l_eps"])
        lines.append(
            f"{float(r['eps']):>10.5g} {K:>14.8g} {l / K if K else math.nan:>8.4f} "
            f"{float(r['residual']):>10.3g} {float(r['sup_norm']):>8.4g} "
            f"{r['converged']:>4} {r['failed']:>6}"
        )
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text)
    print(text, end="")
    return 0


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anisosob", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve", "continue", "verify", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "report")
        p.add_argument("--out")
        p.add_argument("--field")
        p.add_argument("--threads", type=int)
        if name == "report":
            p.add_argument("--trace")
    return ap


_COMMANDS = {"solve": cmd_solve, "continue": cmd_continue, "verify": cmd_verify, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except (AnisoSobError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
