"""Stochastic particle oracle: exact Gillespie simulation of the exchange reaction.

Each event picks an ordered (donor, acceptor) pair with probability
proportional to ``K(u, v) / V``, draws a chunk ``w`` from the normalized
kernel slice, and moves it: ``u -> u - w``, ``v -> v + w``.  Particle count
and total mass are invariant per event.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AbsorbingState, ConfigError
from .grid import Density
from .kernels import sample_chunk

FULL_REFRESH_EVENTS = 10_000
_ROW_CHUNK = 512


# ---------------------------------------------------------------------------
# samplers for initial masses


def exp_sampler(rate=1.0):
    def draw(rng, size):
        return rng.exponential(1.0 / rate, size=size)
    return draw


def dirac_sampler(mass):
    def draw(rng, size):
        return np.full(size, float(mass))
    return draw


def box_sampler(a, b):
    def draw(rng, size):
        return rng.uniform(a, b, size=size)
    return draw


def table_sampler(x, zeta):
    """Inverse-CDF sampling of a piecewise-linear density table."""
    x = np.asarray(x, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    fine = np.linspace(x[0], x[-1], 64 * len(x))
    dens = np.interp(fine, x, zeta)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(fine))])
    cdf /= cdf[-1]

    def draw(rng, size):
        return np.interp(rng.random(size), cdf, fine)
    return draw


# ---------------------------------------------------------------------------
# ensemble and rate caches


@dataclass
class ParticleEnsemble:
    masses: np.ndarray
    volume: float
    rng: np.random.Generator
    t: float = 0.0
    void_accepts: bool = False
    events: int = 0
    last_wait: float = 0.0
    _cache: object = field(default=None, repr=False)
    _cache_kernel: object = field(default=None, repr=False)

    @property
    def count(self):
        return len(self.masses)

    def acceptors(self, m=None):
        m = self.masses if m is None else m
        return np.ones(np.shape(m), dtype=bool) if self.void_accepts else (np.asarray(m) > 0)


def init_ensemble(sampler, count, seed, void_accepts=False):
    if count < 2:
        raise ConfigError(f"an ensemble needs at least 2 particles, got {count}")
    rng = np.random.default_rng(seed)
    masses = np.asarray(sampler(rng, count), dtype=float)
    if np.any(masses < 0) or not np.all(np.isfinite(masses)):
        raise ConfigError("sampled masses must be finite and nonnegative")
    return ParticleEnsemble(masses, float(count), rng, void_accepts=void_accepts)


class _DirectCache:
    """Per-donor row sums R_i = sum_{j != i} K(u_i, u_j) acc_j / V."""

    def __init__(self, e, k):
        self.k = k
        self.refresh(e)

    def refresh(self, e):
        u, acc = e.masses, e.acceptors()
        rows = np.empty(e.count)
        for s in range(0, e.count, _ROW_CHUNK):
            blk = self.k.pair_rates(u[s:s + _ROW_CHUNK, None], u[None, :]) * acc[None, :]
            idx = np.arange(s, min(s + _ROW_CHUNK, e.count))
            blk[idx - s, idx] = 0.0
            rows[s:s + _ROW_CHUNK] = blk.sum(axis=1)
        self.rows = rows / e.volume

    def total(self):
        return float(np.sum(self.rows))

    def pick(self, e):
        total = self.total()
        cum = np.cumsum(self.rows)
        a = min(int(np.searchsorted(cum, e.rng.random() * cum[-1], side="right")), e.count - 1)
        row = self.k.pair_rates(e.masses[a], e.masses) * e.acceptors()
        row[a] = 0.0
        cum = np.cumsum(row)
        b = min(int(np.searchsorted(cum, e.rng.random() * cum[-1], side="right")), e.count - 1)
        return total, a, b

    def update(self, e, a, b, old_a, old_b):
        u = e.masses
        V = e.volume
        for idx, old in ((a, old_a), (b, old_b)):
            new = u[idx]
            delta = (self.k.pair_rates(u, new) * float(e.acceptors(new))
                     - self.k.pair_rates(u, old) * float(e.acceptors(old)))
            self.rows += delta / V
        # touched rows are rebuilt from scratch, which also drops the self terms added above
        acc = e.acceptors()
        for idx in (a, b):
            row = self.k.pair_rates(u[idx], u) * acc
            row[idx] = 0.0
            self.rows[idx] = row.sum() / V


class _SumTree:
    def __init__(self, values):
        n = len(values)
        size = 1
        while size < n:
            size *= 2
        self.size = size
        self.tree = np.zeros(2 * size)
        self.tree[size:size + n] = values
        for p in range(size - 1, 0, -1):
            self.tree[p] = self.tree[2 * p] + self.tree[2 * p + 1]

    @property
    def total(self):
        return float(self.tree[1])

    def set(self, i, value):
        p = i + self.size
        self.tree[p] = value
        p //= 2
        tree = self.tree
        while p:
            tree[p] = tree[2 * p] + tree[2 * p + 1]
            p //= 2

    def find(self, target):
        tree, p = self.tree, 1
        while p < self.size:
            left = tree[2 * p]
            if target < left:
                p = 2 * p
            else:
                target -= left
                p = 2 * p + 1
        return p - self.size


class _FactorCache:
    """K(u, v) = f(u) g(v): donors drawn by f, acceptors by g acc, same-index pairs rejected."""

    def __init__(self, e, k):
        self.f_fn, self.g_fn = k.pair_factors
        self.refresh(e)

    def refresh(self, e):
        u = e.masses
        self.f = np.where(u > 0, self.f_fn(u), 0.0)
        self.g = self.g_fn(u) * e.acceptors()
        self.ft = _SumTree(self.f)
        self.gt = _SumTree(self.g)
        self.diag = float(np.dot(self.f, self.g))

    def total(self, e):
        return max(self.ft.total * self.gt.total - self.diag, 0.0) / e.volume

    def pick(self, e):
        total = self.total(e)
        if total <= 0:
            return total, -1, -1
        rng = e.rng
        while True:
            a = self.ft.find(rng.random() * self.ft.total)
            b = self.gt.find(rng.random() * self.gt.total)
            if a != b and a < e.count and b < e.count:
                return total, a, b

    def update(self, e, a, b, old_a, old_b):
        for idx in (a, b):
            m = e.masses[idx]
            f_new = float(self.f_fn(m)) if m > 0 else 0.0
            g_new = float(self.g_fn(m)) * float(e.acceptors(m))
            self.diag += f_new * g_new - self.f[idx] * self.g[idx]
            self.f[idx], self.g[idx] = f_new, g_new
            self.ft.set(idx, f_new)
            self.gt.set(idx, g_new)


def _cache(e, k):
    if e._cache is None or e._cache_kernel is not k:
        e._cache = _FactorCache(e, k) if k.pair_factors is not None else _DirectCache(e, k)
        e._cache_kernel = k
    return e._cache


def total_rate(e, k):
    """Sum over ordered pairs (donor u, acceptor v), distinct positions, of K(u, v) / V."""
    c = _cache(e, k)
    return c.total(e) if isinstance(c, _FactorCache) else c.total()


def ssa_step(e, k, wait=None):
    """One Gillespie direct-method event; mutates and returns the ensemble.

    ``wait`` lets a caller that already drew the waiting time reuse it.
    """
    c = _cache(e, k)
    if wait is None:
        total = total_rate(e, k)
        if not total > 0:
            raise AbsorbingState(f"no admissible event at t={e.t:.6g}")
        wait = e.rng.exponential(1.0 / total)
    total, a, b = c.pick(e)
    if not (total > 0) or a < 0:
        raise AbsorbingState(f"no admissible event at t={e.t:.6g}")
    u, v = e.masses[a], e.masses[b]
    w = sample_chunk(k, u, v, e.rng)
    new_u = u - w
    if new_u < 0 or (w == u):
        new_u = 0.0
    e.masses[a] = new_u
    e.masses[b] = v + (u - new_u)
    e.t += wait
    e.last_wait = wait
    e.events += 1
    c.update(e, a, b, u, v)
    if e.events % FULL_REFRESH_EVENTS == 0:
        c.refresh(e)
    return e


# ---------------------------------------------------------------------------
# trajectories


def empirical_density(e, grid):
    """Histogram of the ensemble on the lattice cells, divided by V."""
    m = e.masses
    idx = np.where(m > 0, np.maximum(1, np.rint(m / grid.dx).astype(np.int64)), 0)
    idx = np.minimum(idx, grid.cells)
    counts = np.bincount(idx, minlength=grid.size).astype(float) / e.volume
    return Density(counts, grid)


def empirical_moments(e):
    m, V = e.masses, e.volume
    return {
        "M0": float(np.count_nonzero(m > 0)) / V,
        "M0_with_void": len(m) / V,
        "M1": float(np.sum(m)) / V,
        "M2": float(np.sum(m * m)) / V,
    }


@dataclass
class EmpiricalTrajectory:
    times: list
    rows: list
    histograms: list
    events: int
    absorbed: bool = False

    def column(self, name):
        return np.array([row[name] for row in self.rows])


def run_ssa(e, k, T, snapshot_times=(), grid=None, sigma=None):
    """Simulate to time T, recording moments (and histograms when a grid is given)."""
    from .convex import default_sigma, equiintegrability_functional

    w = sigma or default_sigma()
    times = sorted(set([0.0, float(T)] + [float(t) for t in snapshot_times if 0 <= t <= T]))
    rows, hists = [], []
    absorbed = False

    def record(t):
        row = {"t": t, **empirical_moments(e)}
        row["Msigma1"] = float(np.sum(w.sigma(e.masses))) / e.volume
        if grid is not None:
            h = empirical_density(e, grid)
            hists.append(h)
            row["sigma2_functional"] = equiintegrability_functional(h, grid, w)
            row["min_density"] = float(np.min(h.counts))
        else:
            row["sigma2_functional"] = math.nan
            row["min_density"] = math.nan
        row["dt"] = e.last_wait
        rows.append(row)

    record(0.0)
    for target in times[1:]:
        while not absorbed:
            total = total_rate(e, k)
            if not total > 0:
                absorbed = True
                break
            wait = e.rng.exponential(1.0 / total)
            if e.t + wait > target:
                # memorylessness: discard the overshooting wait and restart at the target
                break
            ssa_step(e, k, wait)
        e.t = target
        record(target)
    return EmpiricalTrajectory(times, rows, hists, e.events, absorbed)


def replica_seed(master_seed, replica_id):
    """Independent stream per replica derived from the master seed by a counter."""
    return np.random.SeedSequence([int(master_seed), int(replica_id)])
