"""Truncated event-rate tensor and the conservative right-hand side.

Every admissible event ``(i, j, k)`` moves one cluster from donor bin ``i``
to ``i - k`` and one from acceptor bin ``j`` to ``j + k`` at rate
``R_ijk c_i c_j`` with ``R_ijk = A(i dx, j dx; k dx) w_ik``.  Because the
update is built per event, number and mass are conserved bin-wise for any
nonnegative weights.

The chunk weight ``w_ik`` is the length of the chunk cell
``((k - 1/2) dx, (k + 1/2) dx]`` clipped to ``(0, i dx]``: ``dx`` for
``k < i`` and ``dx / 2`` for the whole-donor transfer ``k = i`` (the
trapezoid rule in z, second order).  ``z_weights="uniform"`` uses ``dx``
throughout, which is first order and overproduces void clusters.

Rates are stored in blocks by chunk ``k``: block ``k`` is the dense
``(N - k + 1) x (N - k - j0 + 1)`` matrix over donors ``i = k..N`` and
acceptors ``j = j0..N-k`` (``j0 = 0`` only when void clusters accept).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigError
from .grid import Density, _same_grid


@dataclass
class EventTensor:
    grid: object
    void_accepts: bool
    rates: np.ndarray
    offsets: np.ndarray
    z_weights: str = "clipped"

    @property
    def j0(self):
        return 0 if self.void_accepts else 1

    def ncols(self, k):
        return max(self.grid.cells - k - self.j0 + 1, 0)

    def block(self, k):
        N = self.grid.cells
        ncol = self.ncols(k)
        start, stop = self.offsets[k], self.offsets[k + 1]
        return self.rates[start:stop].reshape(N - k + 1, ncol) if ncol else np.zeros((N - k + 1, 0))

    @property
    def nnz(self):
        return int(np.count_nonzero(self.rates))

    def entries(self):
        """Nonzero events as arrays (i, j, k, rate) sorted by (i, j, k)."""
        N, j0 = self.grid.cells, self.j0
        ii, jj, kk, rr = [], [], [], []
        for k in range(1, N + 1):
            ncol = self.ncols(k)
            if ncol == 0:
                break
            blk = self.block(k)
            i_idx, j_idx = np.nonzero(blk)
            ii.append(i_idx + k)
            jj.append(j_idx + j0)
            kk.append(np.full(len(i_idx), k))
            rr.append(blk[i_idx, j_idx])
        if not ii:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, empty, np.zeros(0)
        i, j, k, r = (np.concatenate(a) for a in (ii, jj, kk, rr))
        order = np.lexsort((k, j, i))
        return i[order].astype(np.int64), j[order].astype(np.int64), k[order].astype(np.int64), r[order]


def assemble_event_tensor(tk, grid, void_accepts=False, z_weights="clipped"):
    """Tabulate R_ijk over {1 <= k <= i <= N, j0 <= j, j + k <= N}.

    The cutoff indicators of A_n act on cells, so node N (whose cell lies in
    (0, n]) stays admissible; the base kernel is evaluated at the nodes.
    """
    if z_weights not in ("clipped", "uniform"):
        raise ConfigError(f"z_weights must be 'clipped' or 'uniform', got {z_weights!r}")
    if abs(tk.n - grid.n) > 1e-12 * grid.n:
        raise ConfigError(f"kernel cutoff n={tk.n} does not match grid cutoff n={grid.n}")
    N, dx = grid.cells, grid.dx
    j0 = 0 if void_accepts else 1
    x = grid.masses
    sizes = [(N - k + 1) * max(N - k - j0 + 1, 0) for k in range(1, N + 1)]
    offsets = np.zeros(N + 2, dtype=np.int64)
    offsets[2:] = np.cumsum(sizes)
    rates = np.empty(offsets[-1])
    for k in range(1, N + 1):
        ncol = N - k - j0 + 1
        if ncol <= 0:
            break
        donors = x[k:][:, None]
        acceptors = x[j0:j0 + ncol][None, :]
        blk = np.asarray(tk.base(donors, acceptors, k * dx), dtype=float) * dx
        if z_weights == "clipped":
            blk[0] *= 0.5  # donor i = k: only half of the chunk cell lies in (0, i dx]
        if np.any(blk < 0) or not np.all(np.isfinite(blk)):
            raise ConfigError(f"kernel produced negative or non-finite rates at chunk bin {k}")
        rates[offsets[k]:offsets[k + 1]] = blk.ravel()
    return EventTensor(grid, void_accepts, rates, offsets, z_weights)


@njit(cache=True, fastmath=True, boundscheck=False)
def _accumulate(rates, offsets, N, j0, c, out):
    for b in range(N + 1):
        out[b] = 0.0
    col = np.empty(N + 1)
    for k in range(1, N + 1):
        ncol = N - k - j0 + 1
        if ncol <= 0:
            break
        off = offsets[k]
        col[:ncol] = 0.0
        cj = c[j0:j0 + ncol]
        for i in range(k, N + 1):
            ci = c[i]
            if ci == 0.0:
                continue
            row = rates[off + (i - k) * ncol:off + (i - k + 1) * ncol]
            # separate reduction and axpy loops so both vectorize
            s = 0.0
            for jj in range(ncol):
                s += row[jj] * cj[jj]
            for jj in range(ncol):
                col[jj] += row[jj] * ci
            f = s * ci
            out[i] -= f
            out[i - k] += f
        for jj in range(ncol):
            f = col[jj] * cj[jj]
            out[j0 + jj] -= f
            out[j0 + jj + k] += f


def _counts(d):
    return d.counts if isinstance(d, Density) else np.asarray(d, dtype=float)


def eval_rhs(d, et, grid=None, out=None):
    """dc/dt for the lattice system (fast path)."""
    if grid is not None:
        _same_grid(et.grid, grid)
    c = np.ascontiguousarray(_counts(d), dtype=float)
    if out is None:
        out = np.empty_like(c)
    _accumulate(et.rates, et.offsets, et.grid.cells, et.j0, c, out)
    return out


def eval_rhs_reference(d, et, grid=None):
    """Same quantity as :func:`eval_rhs`, accumulated entry by entry with numpy."""
    c = _counts(d)
    i, j, k, r = et.entries()
    f = r * c[i] * c[j]
    out = np.zeros_like(c)
    np.add.at(out, i, -f)
    np.add.at(out, j, -f)
    np.add.at(out, i - k, f)
    np.add.at(out, j + k, f)
    return out


def rhs_components(d, et, grid=None):
    """The four gain/loss groups as separate arrays.

    ``B1``: donor remnants arriving at i - k; ``D1``: acceptors leaving j;
    ``B2``: acceptors arriving at j + k; ``D2``: donors leaving i.
    """
    c = _counts(d)
    i, j, k, r = et.entries()
    f = r * c[i] * c[j]
    parts = {name: np.zeros_like(c) for name in ("B1", "D1", "B2", "D2")}
    np.add.at(parts["B1"], i - k, f)
    np.add.at(parts["D1"], j, -f)
    np.add.at(parts["B2"], j + k, f)
    np.add.at(parts["D2"], i, -f)
    return parts


def weak_form_rate(d, et, grid, omega):
    """Sum over events of [w(j+k) + w(i-k) - w(i) - w(j)] R_ijk c_i c_j."""
    _same_grid(et.grid, grid)
    c = _counts(d)
    w = np.asarray(omega(np.arange(grid.size)) if callable(omega) else omega, dtype=float)
    i, j, k, r = et.entries()
    tilde = w[j + k] + w[i - k] - w[i] - w[j]
    return float(np.sum(tilde * r * c[i] * c[j]))
