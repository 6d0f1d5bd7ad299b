"""Backend selection for the energy/flux kernel.

The compiled extension is used when it imports; set ``ANISOSOB_BACKEND=python``
to force the numpy fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("ANISOSOB_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        BACKEND = "cython"
        _impl = _compiled


def energy_flux(u, h, exps, n1, delta, want_grad=True):
    return _impl.energy_flux(u, h, exps, n1, float(delta), want_grad)


def use_backend(name: str) -> None:
    """Switch backend at runtime (benchmarks and cross-checks)."""
    global BACKEND, _impl
    if name == "python":
        BACKEND, _impl = "python", _kernels_py
    elif name == "cython":
        from . import _kernels

        BACKEND, _impl = "cython", _kernels
    else:
        raise ValueError(f"unknown backend {name!r}")
