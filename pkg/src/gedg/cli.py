"""Command line entry point: ``gedg run|validate-kernel|check-bounds <config>``.

Exit codes: 0 success, 1 configuration error, 2 runtime abort, 3 bound violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import convex, particles
from .config import build_kernel, build_problem, ic_sampler, parse_config, perturbed_initial
from .errors import AbsorbingState, ConfigError, ConservationError, DataError, StiffnessError
from .grid import make_uniform_grid, moment, weighted_l1_distance, write_snapshot
from .integrate import MOMENT_COLUMNS, _fmt, solve
from .kernels import KernelClass, validate_class

logger = logging.getLogger("gedg")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_BOUND = 0, 1, 2, 3


class BoundViolation(Exception):
    pass


# ---------------------------------------------------------------------------
# bounds


def bounds_report(prob, t_end, d0=None):
    """Inputs and closed-form envelopes evaluated for this problem."""
    w = convex.default_sigma()
    d0 = prob.d0 if d0 is None else d0
    b = convex.compute_bound_inputs(d0, prob.grid, prob.kernel, w)
    s1 = float(w.sigma(1.0))
    rep = {"Gamma": b.gamma, "Gamma1": b.gamma1, "Gamma2": b.gamma2, "Gamma3": b.gamma3,
           "Gamma4": b.gamma4, "phi_l1": b.phi_l1, "phi_l1_01": b.phi_l1_01,
           "a_const": b.a_const, "C0": convex.equicontinuity_constant(b), "T": float(t_end),
           "kernel_class": prob.kernel.class_tag.value}
    if prob.kernel.class_tag is KernelClass.SUM:
        rep["Xi_T"] = convex.gronwall_bound_sum(b, s1, t_end)
    elif prob.kernel.class_tag is KernelClass.PRODUCT:
        rep["eta_star"] = b.eta_star
        rep["Lambda_T"] = convex.gronwall_bound_product(b, s1, t_end)
    bad = [k for k, v in rep.items() if isinstance(v, float) and not math.isfinite(v)]
    if bad:
        raise DataError(f"non-finite bound inputs: {', '.join(bad)}")
    return rep, b


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def envelope_checks(traj, prob, b):
    """Rows (t, quantity, value, bound, ok) for the moment, integrability and continuity envelopes."""
    w = convex.default_sigma()
    s1 = float(w.sigma(1.0))
    rows = []
    cls = prob.kernel.class_tag
    init2 = traj.rows[0]["sigma2_functional"]
    for row in traj.rows:
        t = row["t"]
        if cls is KernelClass.SUM:
            bound = convex.gronwall_bound_sum(b, s1, t)
        elif cls is KernelClass.PRODUCT:
            bound = convex.gronwall_bound_product(b, s1, t)
        else:
            bound = None
        if bound is not None:
            ok = row["Msigma1"] < bound if t > 0 else row["Msigma1"] <= bound
            rows.append((t, "Msigma1", row["Msigma1"], bound, ok))
        env = 1.01 * convex.equiintegrability_envelope(init2, b, t)
        rows.append((t, "sigma2_functional", row["sigma2_functional"], env, row["sigma2_functional"] <= env))
    c0 = convex.equicontinuity_constant(b)
    for a in range(len(traj.times)):
        for c in range(a + 1, len(traj.times)):
            gap = traj.times[c] - traj.times[a]
            if gap > 0.1 + 1e-12:
                break
            dist = float(np.sum(np.abs(traj.densities[c].counts[1:] - traj.densities[a].counts[1:])))
            rows.append((traj.times[c], f"l1_increment_from_{_fmt(traj.times[a])}", dist,
                         c0 * gap, dist <= c0 * gap))
    return rows


# ---------------------------------------------------------------------------
# modes


def _out(cfg, *parts):
    path = os.path.join(cfg.output_dir, *parts)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    return path


def _snapshot_name(t):
    return f"snapshot_t{_fmt(t)}.csv"


def run_pde(cfg):
    prob = build_problem(cfg)
    rep, _ = bounds_report(prob, cfg.t_end)
    write_json(_out(cfg, "bounds.json"), rep)
    times = sorted(set(cfg.times) | set(cfg.snapshot_times))
    traj = solve(prob.tensor, prob.grid, prob.d0, cfg.t_end, times, prob.control,
                 cons_tol=cfg.cons_tol, dt0=prob.dt0)
    traj.write_csv(_out(cfg, "moments.csv"))
    for t in cfg.snapshot_times:
        write_snapshot(_out(cfg, "snapshots", _snapshot_name(t)), traj.density_at(t))
    return traj, prob


def run_contraction(cfg):
    prob = build_problem(cfg)
    a_u = prob.kernel.unique_a
    if a_u is None:
        raise ConfigError(f"kernel {prob.kernel.name} is outside the uniqueness class; contraction mode needs it")
    d1 = perturbed_initial(prob.d0, prob.grid, cfg.contraction_delta)
    rep, b = bounds_report(prob, cfg.t_end, d0=d1)
    delta = weighted_l1_distance(prob.d0, d1, prob.grid)
    rep.update({"delta": delta, "unique_a": a_u})
    write_json(_out(cfg, "bounds.json"), rep)
    kw = dict(control=prob.control, cons_tol=cfg.cons_tol, dt0=prob.dt0)
    ta = solve(prob.tensor, prob.grid, prob.d0, cfg.t_end, cfg.times, **kw)
    tb = solve(prob.tensor, prob.grid, d1, cfg.t_end, cfg.times, **kw)
    ok = True
    with open(_out(cfg, "contraction.csv"), "w", newline="") as fh:
        fh.write("t,weighted_distance,gronwall_envelope\n")
        for t, da, db in zip(ta.times, ta.densities, tb.densities):
            dist = weighted_l1_distance(da, db, prob.grid)
            env = convex.contraction_envelope(delta, a_u, b.gamma, b.phi_l1_01, t)
            ok &= dist <= env * (1 + 1e-12)
            fh.write(f"{_fmt(t)},{_fmt(dist)},{_fmt(env)}\n")
    if not ok:
        raise BoundViolation("weighted distance exceeded the contraction envelope")
    return ta, tb


def _sweep_point(args):
    cfg, n, cells = args
    prob = build_problem(cfg, n=n, cells=cells)
    traj = solve(prob.tensor, prob.grid, prob.d0, cfg.t_end, cfg.times, prob.control,
                 cons_tol=cfg.cons_tol, dt0=prob.dt0)
    m2 = [moment(d, prob.grid, 2) for d in traj.densities]
    return n, cells, traj, m2


def run_sweep(cfg, jobs=1):
    dx = cfg.n / cfg.cells
    points = [(cfg, float(n), max(2, int(round(n / dx)))) for n in cfg.sweep_n]
    prob = build_problem(cfg)
    rep, _ = bounds_report(prob, cfg.t_end)
    rep["sweep_n"] = [p[1] for p in points]
    write_json(_out(cfg, "bounds.json"), rep)
    results = _map(_sweep_point, points, jobs)
    lines = ["n,cells,M1_initial,M1_final,M1_drift,M2_final,M2_step_difference"]
    prev = None
    for n, cells, traj, m2 in results:
        traj.write_csv(_out(cfg, f"moments_n{_fmt(n)}.csv"), extra={})
        m1 = traj.column("M1")
        diff = math.nan if prev is None else abs(m2[-1] - prev)
        prev = m2[-1]
        lines.append(",".join([_fmt(n), str(cells), _fmt(m1[0]), _fmt(m1[-1]),
                               _fmt(m1[-1] - m1[0]), _fmt(m2[-1]), _fmt(diff)]))
    with open(_out(cfg, "sweep_summary.csv"), "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    return results


def _ssa_replica(args):
    cfg, rid = args
    kernel, grid = build_kernel(cfg), make_uniform_grid(cfg.n, cfg.cells)
    e = particles.init_ensemble(ic_sampler(cfg.ic), cfg.particles,
                                particles.replica_seed(cfg.seed, rid), cfg.void_accepts)
    times = sorted(set(cfg.times) | set(cfg.snapshot_times))
    tr = particles.run_ssa(e, kernel, cfg.t_end, times, grid=grid)
    return rid, tr


def run_ssa_mode(cfg, jobs=1):
    prob = build_problem(cfg)
    rep, _ = bounds_report(prob, cfg.t_end)
    write_json(_out(cfg, "bounds.json"), rep)
    results = _map(_ssa_replica, [(cfg, r) for r in range(cfg.replicas)], jobs)
    cols = list(MOMENT_COLUMNS) + ["M2", "replica_id"]
    with open(_out(cfg, "empirical_moments.csv"), "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for rid, tr in results:
            for row in tr.rows:
                vals = [row[c] for c in cols[:-1]] + [rid]
                fh.write(",".join(_fmt(v) for v in vals) + "\n")
            for t in cfg.snapshot_times:
                idx = tr.times.index(t)
                write_snapshot(_out(cfg, "snapshots", f"replica{rid}_" + _snapshot_name(t)), tr.histograms[idx])
    m2 = np.array([tr.rows[-1]["M2"] for _, tr in results])
    summary = {"replicas": len(m2), "M2_final_mean": float(m2.mean()),
               "M2_final_stderr": float(m2.std(ddof=1) / math.sqrt(len(m2))) if len(m2) > 1 else math.nan}
    write_json(_out(cfg, "ssa_summary.json"), summary)
    return results


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# entry point


def _jobs(value):
    if value is not None:
        return max(1, value)
    env = os.environ.get("GEDG_JOBS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise ConfigError(f"GEDG_JOBS must be an integer, got {env!r}") from None


def cmd_run(cfg, jobs):
    if cfg.mode == "pde":
        run_pde(cfg)
    elif cfg.mode == "contraction":
        run_contraction(cfg)
    elif cfg.mode == "truncation_sweep":
        run_sweep(cfg, jobs)
    else:
        run_ssa_mode(cfg, jobs)


def cmd_validate(cfg, samples, seed):
    prob = build_problem(cfg, cells=max(2, min(cfg.cells, 8)))
    report = validate_class(prob.kernel, samples, seed)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_BOUND


def cmd_check_bounds(cfg):
    traj, prob = run_pde(cfg)
    _, b = bounds_report(prob, cfg.t_end)
    rows = envelope_checks(traj, prob, b)
    with open(_out(cfg, "bounds_check.csv"), "w", newline="") as fh:
        fh.write("t,quantity,value,bound,ok\n")
        for t, q, v, bd, ok in rows:
            fh.write(f"{_fmt(t)},{q},{_fmt(v)},{_fmt(bd)},{int(ok)}\n")
    failed = [r for r in rows if not r[4]]
    for t, q, v, bd, _ in failed[:10]:
        print(f"violated: {q} at t={t:g}: {v:.6g} > {bd:.6g}", file=sys.stderr)
    print(f"{len(rows) - len(failed)}/{len(rows)} bound checks hold")
    return EXIT_BOUND if failed else EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="gedg", description="Exchange-driven growth solver and diagnostics.")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (fallback: $GEDG_JOBS, else 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", help="run the configured mode").add_argument("config")
    v = sub.add_parser("validate-kernel", help="sample the kernel class inequalities")
    v.add_argument("config")
    v.add_argument("--samples", type=int, default=10_000)
    v.add_argument("--seed", type=int, default=0)
    sub.add_parser("check-bounds", help="run and compare against the a priori envelopes").add_argument("config")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
        jobs = _jobs(args.jobs)
        if args.command == "validate-kernel":
            return cmd_validate(cfg, args.samples, args.seed)
        if args.command == "check-bounds":
            return cmd_check_bounds(cfg)
        cmd_run(cfg, jobs)
        return EXIT_OK
    except (ConfigError, DataError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StiffnessError, ConservationError, AbsorbingState) as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except BoundViolation as exc:
        print(f"bound violation: {exc}", file=sys.stderr)
        return EXIT_BOUND


if __name__ == "__main__":
    sys.exit(main())
