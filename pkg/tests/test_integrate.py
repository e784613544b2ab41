import math

import numpy as np
import pytest

from gedg.errors import ConfigError, ConservationError, StiffnessError
from gedg.grid import Density, make_uniform_grid, moment, project_initial
from gedg.integrate import (
    MOMENT_COLUMNS,
    SolverState,
    StepControl,
    solve,
    stability_dt,
    step,
)
from gedg.kernels import ExpEnvelope, Kernel, KernelClass, TableEnvelope, separable_sum_kernel, truncate_kernel
from gedg.rhs import assemble_event_tensor

EXP = ExpEnvelope(1.0)


def problem(n=8, cells=64, kernel=None):
    kernel = kernel or separable_sum_kernel(1.0, EXP)
    g = make_uniform_grid(n, cells)
    tk = truncate_kernel(kernel, n)
    d0 = project_initial(lambda x: np.exp(-x), g, antiderivative=lambda x: -np.exp(-x))
    return g, tk, assemble_event_tensor(tk, g), d0


class TestStabilityDt:
    def test_arithmetic(self):
        flat = TableEnvelope([0.0, 4.0], [0.25, 0.25])
        k = Kernel(lambda x, y, z: 0.25 * np.ones_like(x), KernelClass.SUM, 1.0, flat)
        g = make_uniform_grid(4, 8)
        d = g.zeros()
        d.counts[3] = 1.0
        assert stability_dt(d, truncate_kernel(k, 4), g) == pytest.approx(1 / 256)

    def test_empty_state(self):
        g, tk, _, _ = problem()
        assert stability_dt(g.zeros(), tk, g) == math.inf

    def test_quadratic_in_cutoff(self):
        flat = TableEnvelope([0.0, 64.0], [1.0, 1.0])
        k = Kernel(lambda x, y, z: np.ones_like(x), KernelClass.SUM, 1.0, flat)
        g4, g8 = make_uniform_grid(4, 8), make_uniform_grid(8, 16)
        d4, d8 = g4.zeros(), g8.zeros()
        d4.counts[1] = d8.counts[1] = 1.0
        ratio = stability_dt(d4, truncate_kernel(k, 4), g4) / stability_dt(d8, truncate_kernel(k, 8), g8)
        assert ratio == pytest.approx(8.0)  # n^2 and ||phi||_{L1(0,n)} both double with n


class TestStep:
    def test_zero_state_only_advances_time(self):
        g, _, et, _ = problem()
        s = step(SolverState(0.5, g.zeros()), StepControl("rk4", dt=0.1), et, g)
        assert s.t == pytest.approx(0.6) and not np.any(s.d.counts)

    def test_rk4_local_error_fifth_order(self):
        g, _, et, d0 = problem(4, 8)

        def one(h):
            return step(SolverState(0.0, d0), StepControl("rk4", dt=h), et, g).d.counts

        def ref(h):
            return solve(et, g, d0, h, control=StepControl("rk4", dt=h / 64)).densities[-1].counts

        errs = [np.max(np.abs(one(h) - ref(h))) for h in (0.4, 0.2)]
        assert 20 < errs[0] / errs[1] < 45

    def test_conservation_over_1000_steps(self):
        g, _, et, d0 = problem(8, 64)
        tr = solve(et, g, d0, 1.0, control=StepControl("rk4", dt=1e-3))
        m1 = tr.column("M1")
        assert abs(m1[-1] - m1[0]) / m1[0] <= 1e-10
        assert tr.stats.steps == 1000

    def test_negative_proposals_are_rejected(self):
        g, _, et, d0 = problem(4, 16)
        s = step(SolverState(0.0, d0), StepControl("rk4", dt=50.0), et, g)
        assert s.stats.rejected_steps > 0 and np.all(s.d.counts >= 0)

    def test_stiffness_error_after_max_halvings(self, monkeypatch):
        import gedg.integrate as integ

        g, _, et, d0 = problem(4, 8)
        monkeypatch.setattr(integ, "_rk4", lambda c, h, et, stats: c - 1.0)
        with pytest.raises(StiffnessError) as info:
            step(SolverState(0.0, d0), StepControl("rk4", dt=1.0), et, g)
        assert info.value.dump["h"] == pytest.approx(2.0**-40)

    def test_control_validation(self):
        with pytest.raises(ConfigError):
            StepControl("euler")
        with pytest.raises(ConfigError):
            StepControl("rk4")
        with pytest.raises(ConfigError):
            StepControl("rk45", rtol=0)


class TestSolve:
    def test_zero_horizon(self):
        g, _, et, d0 = problem()
        tr = solve(et, g, d0, 0.0)
        assert tr.times == [0.0] and len(tr.densities) == 1

    def test_adaptive_conserves_and_hits_output_times(self):
        g, _, et, d0 = problem(16, 128)
        tr = solve(et, g, d0, 1.0, [0.25, 0.5, 0.75])
        assert tr.times == [0.0, 0.25, 0.5, 0.75, 1.0]
        for col in ("M0_with_void", "M1"):
            v = tr.column(col)
            assert np.max(np.abs(v - v[0])) <= 1e-8 * v[0]
        assert np.all(tr.column("min_density") >= 0)

    def test_number_mass_bound(self):
        g, _, et, d0 = problem(8, 64)
        tr = solve(et, g, d0, 1.0, [0.5])
        gamma = moment(d0, g, 0) + moment(d0, g, 1)
        for d in tr.densities:
            assert moment(d, g, 0) + moment(d, g, 1) <= gamma * (1 + 1e-12)

    def test_rk4_and_rk45_agree(self):
        g, _, et, d0 = problem(8, 32)
        a = solve(et, g, d0, 0.5, control=StepControl("rk4", dt=1e-3)).densities[-1].counts
        b = solve(et, g, d0, 0.5, control=StepControl(rtol=1e-9, atol=1e-14)).densities[-1].counts
        np.testing.assert_allclose(a, b, atol=1e-8)

    def test_conservation_breach_aborts(self):
        g, _, et, d0 = problem(4, 8)
        with pytest.raises(ConservationError):
            solve(et, g, d0, 1.0, control=StepControl("rk4", dt=0.1), cons_tol=1e-300)

    def test_csv_schema_and_determinism(self, tmp_path):
        g, _, et, d0 = problem(4, 16)
        paths = []
        for name in ("a.csv", "b.csv"):
            tr = solve(et, g, d0, 0.3, [0.1, 0.2], StepControl("rk4", dt=0.01))
            tr.write_csv(tmp_path / name)
            paths.append((tmp_path / name).read_bytes())
        assert paths[0] == paths[1]
        header, first = paths[0].decode().splitlines()[:2]
        assert header == ",".join(MOMENT_COLUMNS)
        assert len(first.split(",")) == len(MOMENT_COLUMNS)

    def test_void_accepts_conserves(self):
        g = make_uniform_grid(4, 16)
        tk = truncate_kernel(separable_sum_kernel(1.0, EXP, "sum"), 4)
        et = assemble_event_tensor(tk, g, void_accepts=True)
        d0 = Density(np.r_[0.2, np.full(16, 0.05)], g)
        tr = solve(et, g, d0, 0.5)
        v = tr.column("M0_with_void")
        assert abs(v[-1] - v[0]) <= 1e-12
