import math

import numpy as np
import pytest

from gedg.errors import AbsorbingState, ConfigError
from gedg.grid import make_uniform_grid
from gedg.kernels import ExpEnvelope, separable_product_kernel, separable_sum_kernel
from gedg.particles import (
    ParticleEnsemble,
    dirac_sampler,
    empirical_density,
    exp_sampler,
    init_ensemble,
    replica_seed,
    run_ssa,
    ssa_step,
    total_rate,
)

EXP = ExpEnvelope(1.0)
CONST = separable_sum_kernel(1.0, EXP)


def ensemble(masses, seed=0, **kw):
    m = np.asarray(masses, dtype=float)
    return ParticleEnsemble(m, float(len(m)), np.random.default_rng(seed), **kw)


class TestInit:
    def test_exp_mean(self):
        e = init_ensemble(exp_sampler(), 10**4, 1)
        assert abs(e.masses.mean() - 1.0) <= 3 / math.sqrt(10**4)
        assert e.volume == 10**4

    def test_dirac(self):
        e = init_ensemble(dirac_sampler(2.0), 100, 0)
        assert np.all(e.masses == 2.0)

    def test_single_particle_rejected(self):
        with pytest.raises(ConfigError):
            init_ensemble(exp_sampler(), 1, 0)


class TestTotalRate:
    def test_all_void(self):
        assert total_rate(ensemble([0.0, 0.0, 0.0]), CONST) == 0.0

    def test_two_particles(self):
        e = ensemble([math.log(2), 5.0])
        want = (0.5 + (1 - math.exp(-5))) / 2
        assert want == pytest.approx(0.74663, abs=1e-5)
        assert total_rate(e, CONST) == pytest.approx(want, rel=1e-14)

    @pytest.mark.parametrize("kernel", [CONST, separable_sum_kernel(1.0, EXP, "sum")])
    def test_matches_pair_sum(self, kernel):
        e = ensemble(np.random.default_rng(4).exponential(size=40))
        u = e.masses
        K = kernel.pair_rates(u[:, None], u[None, :])
        np.fill_diagonal(K, 0.0)
        assert total_rate(e, kernel) == pytest.approx(K.sum() / e.volume, rel=1e-12)

    def test_voids_accept_only_when_enabled(self):
        m = [1.0, 0.0, 2.0]
        closed, opened = ensemble(m), ensemble(m, void_accepts=True)
        K = CONST.pair_rates
        assert total_rate(closed, CONST) == pytest.approx((K(1, 2) + K(2, 1)) / 3)
        assert total_rate(opened, CONST) == pytest.approx((2 * K(1, 0) + 2 * K(2, 0)) / 3)

    def test_intensive(self):
        rates = []
        for count in (10**3, 10**4):
            e = init_ensemble(exp_sampler(), count, 5)
            rates.append(total_rate(e, CONST) / count)
        assert rates[0] == pytest.approx(rates[1], rel=0.1)


class TestStep:
    @pytest.mark.parametrize("kernel", [CONST, separable_sum_kernel(1.0, EXP, "sum"),
                                        separable_product_kernel(1.0, EXP, "sqrt")])
    def test_invariants_every_event(self, kernel):
        e = init_ensemble(exp_sampler(), 200, 3)
        count, mass = e.count, math.fsum(e.masses)
        for _ in range(500):
            ssa_step(e, kernel)
            assert e.count == count and np.all(e.masses >= 0)
            assert math.fsum(e.masses) == pytest.approx(mass, rel=1e-13)

    def test_first_event_time(self):
        rate = (0.5 + (1 - math.exp(-5))) / 2
        waits = []
        for r in range(10**4):
            e = ensemble([math.log(2), 5.0], seed=r)
            ssa_step(e, CONST)
            waits.append(e.t)
        mean = 1 / rate
        assert abs(np.mean(waits) - mean) <= 3 * mean / math.sqrt(len(waits))

    def test_absorbing(self):
        with pytest.raises(AbsorbingState):
            ssa_step(ensemble([0.0, 0.0]), CONST)

    def test_replay(self):
        runs = []
        for _ in range(2):
            e = init_ensemble(exp_sampler(), 300, replica_seed(9, 3))
            run_ssa(e, CONST, 0.5)
            runs.append(e.masses.copy())
        np.testing.assert_array_equal(*runs)

    def test_direct_and_factorized_paths_agree_in_law(self):
        import dataclasses

        direct = dataclasses.replace(CONST, pair_factors=None)
        m2 = {}
        for name, k in (("factor", CONST), ("direct", direct)):
            rows = [run_ssa(init_ensemble(exp_sampler(), 300, replica_seed(1, r)), k, 1.0).rows
                    for r in range(30)]
            m2[name] = [r[-1]["M2"] - r[0]["M2"] for r in rows]
        a, b = np.asarray(m2["factor"]), np.asarray(m2["direct"])
        se = math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
        assert abs(a.mean() - b.mean()) <= 4 * se


class TestRun:
    def test_zero_horizon(self):
        e = init_ensemble(exp_sampler(), 100, 0)
        tr = run_ssa(e, CONST, 0.0)
        assert tr.times == [0.0] and tr.events == 0

    def test_conserved_moments_exact(self):
        grid = make_uniform_grid(16, 128)
        e = init_ensemble(exp_sampler(), 2000, 2)
        tr = run_ssa(e, CONST, 1.0, [0.5], grid=grid)
        assert len(set(tr.column("M0_with_void"))) == 1
        np.testing.assert_allclose(tr.column("M1"), tr.column("M1")[0], rtol=1e-12)
        h = tr.histograms[-1]
        assert h.counts.sum() == pytest.approx(1.0)

    def test_histogram_binning(self):
        grid = make_uniform_grid(4, 4)
        e = ensemble([0.0, 0.3, 1.4, 1.6, 3.9, 7.0])
        np.testing.assert_allclose(empirical_density(e, grid).counts * 6, [1, 2, 1, 0, 2])

    def test_replica_variance_scales_inversely_with_count(self):
        var = {}
        for count, reps in ((10**3, 40), (10**4, 16), (10**5, 8)):
            m2 = [run_ssa(init_ensemble(exp_sampler(), count, replica_seed(17, r)), CONST, 0.2)
                  .rows[-1]["M2"] for r in range(reps)]
            var[count] = np.var(m2, ddof=1)
        slope = np.polyfit(np.log10(list(var)), np.log10(list(var.values())), 1)[0]
        assert -1.5 < slope < -0.5
