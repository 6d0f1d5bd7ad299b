"""Compare the compiled and numpy energy/flux kernels.

    python benchmarks/bench_kernels.py [--n 33] [--repeat 5] [--number 20]

Prints the agreement between backends and the time per call for a few
exponent settings, plus one full solve with each backend.
"""

from __future__ import annotations

import argparse
import time
import timeit

import numpy as np

from anisosob import _kernels_py, kernels
from anisosob.exponents import epsilon_exponents, exponent_vector
from anisosob.grid import make_grid
from anisosob.solver import SolverOptions, gaussian_init, minimize

CASES = [
    ("quadratic", (2.0, 2.0, 2.0), 0, 0.0),
    ("unit+quadratic eps=0.1", (1.1, 2.4, 2.4), 1, 1e-4),
    ("tail q<2", (1.05, 1.5, 1.5), 1, 1e-4),
]


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=33)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    args = ap.parse_args()
    try:
        from anisosob import _kernels
    except ImportError:
        print("compiled extension not built; nothing to compare")
        return

    rng = np.random.default_rng(0)
    n = args.n
    u = rng.random((n, n, n))
    u[0] = u[-1] = u[:, 0] = u[:, -1] = u[:, :, 0] = u[:, :, -1] = 0.0
    h = (0.1, 0.2, 0.3)
    print(f"grid {n}^3, best of {args.repeat} x {args.number} calls")
    print(f"{'case':<26}{'grad':>6}{'cython ms':>12}{'numpy ms':>12}{'speedup':>9}{'max rel diff':>15}")
    for name, exps, n1, delta in CASES:
        for want in (True, False):
            t1, g1 = _kernels.energy_flux(u, h, exps, n1, delta, want)
            t2, g2 = _kernels_py.energy_flux(u, h, exps, n1, delta, want)
            diff = float(np.max(np.abs(t1 - t2) / np.maximum(np.abs(t2), 1e-300)))
            if want:
                diff = max(diff, float(np.max(np.abs(g1 - g2)) / np.max(np.abs(g2))))
            times = []
            for mod in (_kernels, _kernels_py):
                f = lambda: mod.energy_flux(u, h, exps, n1, delta, want)  # noqa: E731
                times.append(min(timeit.repeat(f, number=args.number, repeat=args.repeat))
                             / args.number * 1e3)
            print(f"{name:<26}{str(want):>6}{times[0]:>12.3f}{times[1]:>12.3f}"
                  f"{times[1] / times[0]:>9.1f}{diff:>15.2e}")

    x = exponent_vector([1, 2, 2])
    ee = epsilon_exponents(x, 0.4)
    grid = make_grid([3.0] * 3, [n] * 3)
    opts = SolverOptions(max_iters=300, tol_residual=1e-3)
    print("\nsolve at eps = 0.4, 300 iterations max")
    for backend in ("cython", "python"):
        kernels.use_backend(backend)
        t0 = time.perf_counter()
        res = minimize(gaussian_init(grid, ee.p_star_eps), ee, opts)
        dt = time.perf_counter() - t0
        print(f"  {backend:<7} {dt:7.2f} s  iters={res.iters}  K={res.K_eps:.12g}")


if __name__ == "__main__":
    main()
