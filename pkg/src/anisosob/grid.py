"""Truncated-box tensor grid, difference operators and rectangle quadrature.

Nodes are ordered row-major (C order).  Fields are stored as N-dimensional
arrays of shape ``grid.counts``; ``field.values.ravel()`` is the flat
row-major node vector.

The divergence is the exact negative adjoint of the forward difference with
zero extension, so the summation-by-parts identity

    sum(sigma . D u) * vol == -sum(div(sigma) * u) * vol

holds to rounding for every zero-boundary ``u``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import GridMismatch, TooLarge

MAX_NODES = 50_000_000


@dataclass(frozen=True)
class Grid:
    half_lengths: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.half_lengths) != len(self.counts):
            raise ValueError("half_lengths and counts differ in length")

    @property
    def N(self) -> int:
        return len(self.counts)

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(2.0 * L / (n - 1) for L, n in zip(self.half_lengths, self.counts))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        # centered index times spacing: exactly antisymmetric about 0
        return tuple(
            (np.arange(n) - 0.5 * (n - 1)) * h for n, h in zip(self.counts, self.spacings)
        )

    def coords(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays, one per axis."""
        return list(np.meshgrid(*self.axes, indexing="ij", sparse=True))

    def radius(self) -> np.ndarray:
        r2 = sum(c * c for c in self.coords())
        return np.sqrt(r2)

    def interior_mask(self, margin: int = 1) -> np.ndarray:
        m = np.zeros(self.counts, dtype=bool)
        m[tuple(slice(margin, n - margin) for n in self.counts)] = True
        return m

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.counts))

    def sample(self, f: Callable[..., np.ndarray]) -> "Field":
        """Evaluate ``f(x1, ..., xN)`` on the nodes and zero the boundary."""
        vals = np.broadcast_to(np.asarray(f(*self.coords()), dtype=float), self.counts).copy()
        out = Field(self, vals)
        out.zero_boundary()
        return out


@dataclass
class Field:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.counts:
            if self.values.size == self.grid.size:
                self.values = self.values.reshape(self.grid.counts)
            else:
                raise GridMismatch(
                    f"values of shape {self.values.shape} do not fit grid {self.grid.counts}"
                )

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def zero_boundary(self) -> "Field":
        v = self.values
        for ax in range(v.ndim):
            idx = [slice(None)] * v.ndim
            idx[ax] = 0
            v[tuple(idx)] = 0.0
            idx[ax] = -1
            v[tuple(idx)] = 0.0
        return self

    def is_zero_boundary(self) -> bool:
        return bool(np.all(self.values[~self.grid.interior_mask()] == 0.0))

    def __mul__(self, c: float) -> "Field":
        return Field(self.grid, self.values * c)

    __rmul__ = __mul__

    def __add__(self, other: "Field") -> "Field":
        _check_same(self.grid, [other])
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _check_same(self.grid, [other])
        return Field(self.grid, self.values - other.values)


def make_grid(
    half_lengths: Sequence[float], counts: Sequence[int], max_nodes: int = MAX_NODES
) -> Grid:
    half_lengths = tuple(float(L) for L in half_lengths)
    counts = tuple(int(n) for n in counts)
    if len(half_lengths) != len(counts) or not counts:
        raise ValueError("half_lengths and counts must be nonempty and of equal length")
    if any(not L > 0 for L in half_lengths):
        raise ValueError(f"half lengths must be > 0, got {half_lengths}")
    if any(n < 3 for n in counts):
        raise ValueError(f"node counts must be >= 3, got {counts}")
    total = int(np.prod(counts, dtype=object))
    if total > max_nodes:
        raise TooLarge(f"{total} nodes exceeds the cap of {max_nodes}")
    return Grid(half_lengths, counts)


def _check_same(grid: Grid, fields: Sequence[Field]) -> None:
    for f in fields:
        if f.grid != grid:
            raise GridMismatch("fields live on different grids")


def diff_array(v: np.ndarray, axis: int, h: float) -> np.ndarray:
    d = np.empty_like(v)
    n = v.shape[axis]
    hi = [slice(None)] * v.ndim
    lo = [slice(None)] * v.ndim
    hi[axis] = slice(1, n)
    lo[axis] = slice(0, n - 1)
    d[tuple(lo)] = (v[tuple(hi)] - v[tuple(lo)]) / h
    last = [slice(None)] * v.ndim
    last[axis] = n - 1
    d[tuple(last)] = -v[tuple(last)] / h
    return d


def diff_adjoint_array(s: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Transpose of :func:`diff_array`: ``(s[k-1] - s[k]) / h`` with ``s[-1] = 0``."""
    out = -s / h
    n = s.shape[axis]
    hi = [slice(None)] * s.ndim
    lo = [slice(None)] * s.ndim
    hi[axis] = slice(1, n)
    lo[axis] = slice(0, n - 1)
    out[tuple(hi)] += s[tuple(lo)] / h
    return out


def forward_diff(u: Field, i: int) -> Field:
    if not 0 <= i < u.grid.N:
        raise ValueError(f"axis {i} out of range for N = {u.grid.N}")
    return Field(u.grid, diff_array(u.values, i, u.grid.spacings[i]))


def backward_div(sigma: Sequence[Field]) -> Field:
    if len(sigma) == 0:
        raise ValueError("empty flux")
    grid = sigma[0].grid
    _check_same(grid, sigma)
    if len(sigma) != grid.N:
        raise GridMismatch(f"expected {grid.N} flux components, got {len(sigma)}")
    h = grid.spacings
    out = np.zeros(grid.counts)
    for i, s in enumerate(sigma):
        out -= diff_adjoint_array(s.values, i, h[i])
    return Field(grid, out)


def integrate(u: Field) -> float:
    return float(u.values.sum() * u.grid.cell_volume)


def lp_norm(u: Field, p: float) -> float:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    a = np.abs(u.values)
    m = float(a.max()) if a.size else 0.0
    if m == 0.0 or not math.isfinite(m):
        return m
    # scale first so tiny or huge fields neither underflow nor overflow
    return m * float((np.sum((a / m) ** p) * u.grid.cell_volume) ** (1.0 / p))


def grad1_mag(u: Field, N1: int, delta: float = 0.0) -> Field:
    if delta < 0:
        raise ValueError("delta must be >= 0")
    h = u.grid.spacings
    s = np.zeros(u.grid.counts)
    for i in range(N1):
        d = diff_array(u.values, i, h[i])
        s += d * d
    if delta == 0.0:
        return Field(u.grid, np.sqrt(s))
    return Field(u.grid, np.sqrt(s + delta * delta) - delta)


# -- CSV field dump -----------------------------------------------------------


def dump_field(u: Field, path: str | Path) -> None:
    """Write ``i1..iN,x1..xN,value`` rows in row-major node order."""
    g = u.grid
    N = g.N
    idx = np.indices(g.counts).reshape(N, -1)
    xs = [g.axes[i][idx[i]] for i in range(N)]
    vals = u.values.ravel()
    header = [f"i{k + 1}" for k in range(N)] + [f"x{k + 1}" for k in range(N)] + ["value"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in range(vals.size):
            w.writerow(
                [int(idx[i, row]) for i in range(N)]
                + [f"{xs[i][row]:.17g}" for i in range(N)]
                + [f"{vals[row]:.17g}"]
            )


def load_field(path: str | Path) -> Field:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [row for row in r if row]
    N = (len(header) - 1) // 2
    if len(header) != 2 * N + 1 or header[-1] != "value":
        raise ValueError(f"{path}: malformed field header {header}")
    data = np.array(rows, dtype=float)
    idx = data[:, :N].astype(int)
    counts = tuple(int(c) for c in idx.max(axis=0) + 1)
    half = tuple(float(v) for v in np.abs(data[:, N : 2 * N]).max(axis=0))
    grid = make_grid(half, counts)
    if data.shape[0] != grid.size:
        raise ValueError(f"{path}: {data.shape[0]} rows for {grid.size} nodes")
    vals = np.empty(grid.size)
    vals[np.ravel_multi_index(idx.T, counts)] = data[:, -1]
    return Field(grid, vals.reshape(counts))
