"""Node-aligned uniform mass lattice, initial-data projection, moments and norms.

Bin ``i`` sits at mass ``i * dx``; bin 0 holds void (mass-zero) clusters.
Bin ``i >= 1`` owns the cell ``((i - 1/2) dx, (i + 1/2) dx]`` clipped to
``(0, n]``, with the first cell extended down to 0 so that all of ``(0, n]``
is covered.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, LogicError


@dataclass(frozen=True)
class SizeGrid:
    n: float
    cells: int

    @property
    def dx(self):
        return self.n / self.cells

    @property
    def masses(self):
        return np.arange(self.cells + 1) * self.dx

    @property
    def edges(self):
        """Cell boundaries of bins 1..N (length N + 1)."""
        N, dx = self.cells, self.dx
        inner = (np.arange(1, N) + 0.5) * dx
        return np.concatenate([[0.0], inner, [self.n]])

    @property
    def size(self):
        return self.cells + 1

    def zeros(self):
        return Density(np.zeros(self.size), self)


def make_uniform_grid(n, cells):
    problems = []
    if not (n > 1 and math.isfinite(n)):
        problems.append(f"cutoff n must satisfy n > 1 (truncated domain (0, n)), got n={n}")
    if int(cells) != cells or cells < 2:
        problems.append(f"cells must be an integer >= 2, got {cells}")
    if problems:
        raise ConfigError("; ".join(problems), problems)
    return SizeGrid(float(n), int(cells))


@dataclass
class Density:
    """Per-bin number concentrations c_i ~ zeta(i dx) dx; c[0] counts void clusters."""

    counts: np.ndarray
    grid: SizeGrid

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.shape != (self.grid.size,):
            raise LogicError(f"density has {self.counts.shape} bins, grid expects {self.grid.size}")

    @property
    def void(self):
        return float(self.counts[0])

    def zeta(self):
        """Point values c_i / dx for bins 1..N."""
        return self.counts[1:] / self.grid.dx

    def copy(self):
        return Density(self.counts.copy(), self.grid)


def _same_grid(*grids):
    g0 = grids[0]
    for g in grids[1:]:
        if g != g0:
            raise LogicError(f"grid mismatch: {g0} vs {g}")


def project_initial(f, grid, antiderivative=None, sub=8):
    """Cell integrals of the initial data f on bins 1..N; c_0 = 0.

    With ``antiderivative`` the integrals are exact differences; otherwise each
    cell is split into ``sub`` pieces with 5-point Gauss-Legendre on each.
    """
    edges = grid.edges
    if antiderivative is not None:
        F = np.asarray(antiderivative(edges), dtype=float)
        cells = np.diff(F)
    else:
        gx, gw = np.polynomial.legendre.leggauss(5)
        gx, gw = 0.5 * (gx + 1.0), 0.5 * gw
        a, b = edges[:-1], edges[1:]
        h = (b - a) / sub
        offs = (np.arange(sub)[:, None] + gx[None, :]).ravel()
        wts = np.tile(gw, sub)
        pts = a[:, None] + offs[None, :] * h[:, None]
        vals = np.asarray(f(pts), dtype=float)
        cells = np.sum(vals * wts[None, :], axis=1) * h
    if not np.all(np.isfinite(cells)):
        raise DataError("initial data quadrature is not finite")
    if np.any(cells < 0):
        if np.min(cells) < -1e-14 * max(1.0, np.max(np.abs(cells))):
            raise DataError("initial data must be nonnegative")
        cells = np.maximum(cells, 0.0)
    return Density(np.concatenate([[0.0], cells]), grid)


def moment(d, grid, r):
    """Sum_{i>=1} (i dx)^r c_i, plus the void count c_0 when r == 0."""
    _same_grid(d.grid, grid)
    c = d.counts
    if r == 0:
        return float(np.sum(c))
    x = grid.masses[1:]
    return float(np.dot(x**r, c[1:]))


def number_without_void(d):
    return float(np.sum(d.counts[1:]))


def uniqueness_weight(grid):
    """max(1, sqrt(x)) on bins 0..N."""
    return np.maximum(1.0, np.sqrt(grid.masses))


def weighted_l1_distance(d1, d2, grid):
    _same_grid(d1.grid, d2.grid, grid)
    return float(np.dot(uniqueness_weight(grid), np.abs(d1.counts - d2.counts)))


# ---------------------------------------------------------------------------
# snapshot files


def _fmt(v):
    return format(float(v), ".17g")


def write_snapshot(path_or_buf, d):
    """CSV with header ``x,zeta`` for bins 1..N, then a ``void_count,<value>`` line."""
    out = io.StringIO()
    out.write("x,zeta\n")
    for x, z in zip(d.grid.masses[1:], d.zeta()):
        out.write(f"{_fmt(x)},{_fmt(z)}\n")
    out.write(f"void_count,{_fmt(d.void)}\n")
    text = out.getvalue()
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", newline="") as fh:
            fh.write(text)


def read_snapshot(path_or_buf, grid):
    if hasattr(path_or_buf, "read"):
        lines = path_or_buf.read().splitlines()
    else:
        with open(path_or_buf) as fh:
            lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "x,zeta":
        raise DataError("snapshot must start with header 'x,zeta'")
    void = 0.0
    zeta = []
    for line in lines[1:]:
        if not line.strip():
            continue
        key, val = line.split(",")
        if key == "void_count":
            void = float(val)
        else:
            zeta.append(float(val))
    if len(zeta) != grid.cells:
        raise DataError(f"snapshot has {len(zeta)} rows, grid has {grid.cells} bins")
    return Density(np.concatenate([[void], np.asarray(zeta) * grid.dx]), grid)
