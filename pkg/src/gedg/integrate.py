"""Explicit time stepping of the lattice system with positivity and conservation guards."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .convex import default_sigma, equiintegrability_functional, tail_moment
from .errors import ConfigError, ConservationError, StiffnessError
from .grid import Density, moment, number_without_void
from .rhs import eval_rhs

logger = logging.getLogger(__name__)

MOMENT_COLUMNS = ("t", "M0", "M0_with_void", "M1", "Msigma1", "sigma2_functional", "min_density", "dt")

# Dormand-Prince 5(4) tableau
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_DP_E = _DP_B5 - _DP_B4


@dataclass
class StepControl:
    method: str = "rk45"
    dt: float | None = None
    rtol: float = 1e-6
    atol: float = 1e-12
    max_halvings: int = 40
    dt_max: float = math.inf

    def __post_init__(self):
        problems = []
        if self.method not in ("rk4", "rk45"):
            problems.append(f"method must be rk4 or rk45, got {self.method!r}")
        if self.method == "rk4" and not (self.dt and self.dt > 0):
            problems.append("rk4 needs a positive dt")
        if self.dt is not None and not self.dt > 0:
            problems.append(f"dt must be > 0, got {self.dt}")
        if not (self.rtol > 0 and self.atol > 0):
            problems.append("rtol and atol must be > 0")
        if problems:
            raise ConfigError("; ".join(problems), problems)


@dataclass
class SolverStats:
    steps: int = 0
    rejected_steps: int = 0
    min_density_seen: float = math.inf
    rhs_evals: int = 0


@dataclass
class SolverState:
    t: float
    d: Density
    stats: SolverStats = field(default_factory=SolverStats)
    dt_next: float | None = None
    last_dt: float = 0.0


def stability_dt(d, tk, grid):
    """1 / (16 A n^2 |phi|_{L1(0,n)} |d|_1); +inf for the empty state."""
    norm = float(np.sum(np.abs(d.counts)))
    c_l = 16.0 * tk.a_const * tk.n**2 * tk.phi.l1_norm(tk.n)
    if norm == 0.0 or c_l == 0.0:
        return math.inf
    return 1.0 / (c_l * norm)


def _rk4(c, h, et, stats):
    k1 = eval_rhs(c, et)
    k2 = eval_rhs(c + 0.5 * h * k1, et)
    k3 = eval_rhs(c + 0.5 * h * k2, et)
    k4 = eval_rhs(c + h * k3, et)
    stats.rhs_evals += 4
    return c + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _dopri(c, h, et, stats):
    ks = []
    for s in range(7):
        y = c.copy()
        for a, k in zip(_DP_A[s], ks):
            if a:
                y += (h * a) * k
        ks.append(eval_rhs(y, et))
    stats.rhs_evals += 7
    K = np.stack(ks)
    new = c + h * (_DP_B5 @ K)
    err = h * (_DP_E @ K)
    return new, err


def step(state, control, et, grid, dt=None):
    """Advance by one accepted step; negative bins cause rejection and halving."""
    c = state.d.counts
    stats = replace(state.stats)
    if control.method == "rk4":
        h = dt if dt is not None else control.dt
    else:
        h = state.dt_next or control.dt or 1e-3
        if dt is not None:
            h = min(h, dt)
    h = min(h, control.dt_max)
    if h <= 0:
        raise ConfigError(f"step size must be positive, got {h}")
    if float(np.sum(c)) == 0.0:
        return SolverState(state.t + h, state.d.copy(), stats, state.dt_next, h)

    rejections = 0
    while True:
        if control.method == "rk4":
            new = _rk4(c, h, et, stats)
            ok_err, factor = True, 1.0
        else:
            new, err = _dopri(c, h, et, stats)
            scale = control.atol + control.rtol * np.maximum(np.abs(c), np.abs(new))
            en = float(np.sqrt(np.mean((err / scale) ** 2)))
            ok_err = en <= 1.0
            factor = 5.0 if en == 0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
        if ok_err and np.all(new >= 0.0):
            break
        rejections += 1
        stats.rejected_steps += 1
        if rejections > control.max_halvings:
            raise StiffnessError(
                f"{rejections} consecutive step rejections at t={state.t:.6g} (last h={h:.3g})",
                dump={"t": state.t, "h": h, "min_count": float(np.min(c)),
                      "proposed_min": float(np.min(new)), "counts": c.copy()},
            )
        h = 0.5 * h if ok_err else min(0.5 * h, factor * h)
    stats.steps += 1
    stats.min_density_seen = min(stats.min_density_seen, float(np.min(new)))
    dt_next = h if control.method == "rk4" else h * factor
    return SolverState(state.t + h, Density(new, state.d.grid), stats, dt_next, h)


@dataclass
class Trajectory:
    times: list
    rows: list
    densities: list
    stats: SolverStats
    meta: dict = field(default_factory=dict)

    def column(self, name):
        return np.array([row[name] for row in self.rows])

    def density_at(self, t):
        idx = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        return self.densities[idx]

    def write_csv(self, path, extra=None):
        cols = list(MOMENT_COLUMNS) + list(extra or {})
        with open(path, "w", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for row in self.rows:
                vals = [row[c] if c in row else (extra or {})[c] for c in cols]
                fh.write(",".join(_fmt(v) for v in vals) + "\n")


def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def moment_row(t, d, grid, w, dt):
    return {
        "t": t,
        "M0": number_without_void(d),
        "M0_with_void": moment(d, grid, 0),
        "M1": moment(d, grid, 1),
        "Msigma1": tail_moment(d, grid, w),
        "sigma2_functional": equiintegrability_functional(d, grid, w),
        "min_density": float(np.min(d.counts)),
        "dt": dt,
    }


def solve(et, grid, d0, t_end, output_times=None, control=None, sigma=None,
          cons_tol=1e-8, dt0=None):
    """Integrate from d0 to t_end, recording moments and densities at output times."""
    control = control or StepControl()
    w = sigma or default_sigma()
    if t_end < 0:
        raise ConfigError(f"t_end must be >= 0, got {t_end}")
    outs = sorted(set([0.0, float(t_end)] + [float(t) for t in (output_times or []) if 0 <= t <= t_end]))
    m0_ref, m1_ref = moment(d0, grid, 0), moment(d0, grid, 1)
    state = SolverState(0.0, d0.copy(), dt_next=dt0)
    rows = [moment_row(0.0, d0, grid, w, 0.0)]
    dens = [d0.copy()]
    for target in outs[1:]:
        while state.t < target * (1 - 1e-15) - 1e-300:
            remaining = target - state.t
            h = control.dt if control.method == "rk4" else None
            if h is None or h >= remaining * (1 - 1e-12):
                h = remaining if control.method == "rk4" else min(state.dt_next or dt0 or remaining, remaining)
            state = step(state, control, et, grid, dt=h)
            if abs(target - state.t) <= 1e-12 * max(1.0, target):
                state.t = target
            _check_conservation(state, grid, m0_ref, m1_ref, cons_tol)
        rows.append(moment_row(state.t, state.d, grid, w, state.last_dt))
        dens.append(state.d.copy())
    logger.info("solve: %d steps, %d rejected, %d rhs evaluations",
                state.stats.steps, state.stats.rejected_steps, state.stats.rhs_evals)
    return Trajectory([r["t"] for r in rows], rows, dens, state.stats)


def _check_conservation(state, grid, m0_ref, m1_ref, tol):
    m0, m1 = moment(state.d, grid, 0), moment(state.d, grid, 1)
    bad = []
    if abs(m0 - m0_ref) > tol * max(m0_ref, 1e-300):
        bad.append(f"M0 drift {m0 - m0_ref:.3e}")
    if abs(m1 - m1_ref) > tol * max(m1_ref, 1e-300):
        bad.append(f"M1 drift {m1 - m1_ref:.3e}")
    if bad:
        raise ConservationError(f"conservation breach at t={state.t:.6g}: " + ", ".join(bad))


def run(config):
    """Deterministic run described by a RunConfig (pde mode)."""
    from .config import build_problem

    prob = build_problem(config)
    return solve(prob.tensor, prob.grid, prob.d0, config.t_end, config.output_times,
                 prob.control, cons_tol=config.cons_tol, dt0=prob.dt0)
