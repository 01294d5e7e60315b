import numpy as np
import pytest
from scipy.integrate import solve_ivp

from capdrop import analysis
from capdrop.model_core import FixedValue, ModelParams, Scenario, UniformDraw, deterministic_trajectory
from capdrop.sde_engine import (
    Scheme,
    SimConfig,
    diffusion,
    drift,
    simulate_ensemble,
    simulate_path,
    stream_seed,
)

ANCHOR = Scenario(ModelParams(), 150.0)


class TestCoefficients:
    def test_drift_and_diffusion_values(self):
        # alpha = 0.02: drift = 100 (0.06 * 50 - 1), diffusion = 0.02 * 50 * 100
        assert drift(ANCHOR, 100.0) == pytest.approx(200.0)
        assert diffusion(ANCHOR, 100.0) == pytest.approx(100.0)

    def test_boundaries_absorb(self):
        assert drift(ANCHOR, 0.0) == 0.0 and diffusion(ANCHOR, 0.0) == 0.0
        assert diffusion(ANCHOR, 150.0) == 0.0


class TestConfig:
    def test_defaults(self):
        cfg = SimConfig()
        assert cfg.dt == pytest.approx(1e-3)
        assert len(cfg.times()) == 30_001

    @pytest.mark.parametrize(
        "kwargs", [{"t_end": 0.0}, {"n_steps": 0}, {"master_seed": -1}, {"boundary_epsilon": 0.0}]
    )
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            SimConfig(**kwargs)

    def test_epsilon_default_scales_with_n(self):
        assert SimConfig().epsilon_for(150.0) == pytest.approx(1.5e-7)


class TestDeterminism:
    def test_same_seed_same_path(self):
        cfg = SimConfig(t_end=2.0, n_steps=2000, master_seed=7)
        a = simulate_path(ANCHOR, cfg, 10.0)
        b = simulate_path(ANCHOR, cfg, 10.0)
        np.testing.assert_array_equal(a.values, b.values)

    def test_different_streams_differ(self):
        cfg = SimConfig(t_end=2.0, n_steps=2000)
        a = simulate_path(ANCHOR, cfg, 10.0, path_index=0)
        b = simulate_path(ANCHOR, cfg, 10.0, path_index=1)
        assert not np.array_equal(a.values, b.values)

    def test_worker_count_does_not_matter(self):
        cfg = SimConfig(t_end=1.0, n_steps=500, master_seed=3)
        one = simulate_ensemble(ANCHOR, cfg, 300, workers=1)
        many = simulate_ensemble(ANCHOR, cfg, 300, workers=4)
        for p, q in zip(one, many):
            np.testing.assert_array_equal(p.values, q.values)
            assert p.seed == q.seed

    def test_path_independent_of_ensemble_size(self):
        cfg = SimConfig(t_end=1.0, n_steps=500, master_seed=3)
        small = simulate_ensemble(ANCHOR, cfg, 5)
        big = simulate_ensemble(ANCHOR, cfg, 200)
        for p, q in zip(small, big):
            np.testing.assert_array_equal(p.values, q.values)

    def test_stream_seed_depends_on_key(self):
        assert stream_seed(0, (1,)) != stream_seed(0, (2,))
        assert stream_seed(0, (1,)) != stream_seed(1, (1,))

    def test_paths_read_only(self):
        p = simulate_path(ANCHOR, SimConfig(t_end=0.1, n_steps=10), 5.0)
        with pytest.raises(ValueError):
            p.values[0] = 1.0


class TestReduction:
    def test_sigma_zero_matches_ode_solver(self):
        sc = ANCHOR.with_sigma(0.0)
        cfg = SimConfig(t_end=30.0, n_steps=30_000)
        path = simulate_path(sc, cfg, 5.0)
        a = sc.params.c2 * sc.alpha
        ref = solve_ivp(
            lambda _, y: y * (a * (sc.n_total - y) - sc.params.c1),
            (0, 30),
            [5.0],
            t_eval=[5.0, 10.0, 30.0],
            rtol=1e-11,
            atol=1e-12,
        ).y[0]
        got = [path.value_at(t) for t in (5.0, 10.0, 30.0)]
        np.testing.assert_allclose(got, ref, atol=0.5)
        assert got[-1] == pytest.approx(ref[-1], abs=1e-6)

    def test_sigma_zero_euler_is_first_order(self):
        sc = ANCHOR.with_sigma(0.0)
        errs = []
        for steps in (7500, 15000, 30000):
            path = simulate_path(sc, SimConfig(t_end=30.0, n_steps=steps), 5.0)
            errs.append(np.max(np.abs(path.values - deterministic_trajectory(sc, 5.0, path.times))))
        assert 1.5 < errs[0] / errs[1] < 2.5
        assert 1.5 < errs[1] / errs[2] < 2.5

    def test_milstein_matches_euler_without_noise(self):
        sc = ANCHOR.with_sigma(0.0)
        e = simulate_path(sc, SimConfig(t_end=5.0, n_steps=5000), 5.0)
        m = simulate_path(sc, SimConfig(t_end=5.0, n_steps=5000, scheme=Scheme.MILSTEIN), 5.0)
        np.testing.assert_array_equal(e.values, m.values)


class TestEnsembleBehaviour:
    def test_clamping_is_rare_at_default_parameters(self):
        cfg = SimConfig(t_end=10.0, n_steps=10_000)
        paths = simulate_ensemble(ANCHOR, cfg, 200)
        clamps = sum(p.clamp_count for p in paths)
        assert clamps / (200 * cfg.n_steps) < 1e-3

    def test_values_stay_in_range(self):
        sc = Scenario(ModelParams(sigma=3.0), 150.0)
        cfg = SimConfig(t_end=5.0, n_steps=5000)
        for p in simulate_ensemble(sc, cfg, 20):
            assert np.all(p.values > 0) and np.all(p.values < 150.0)

    def test_ensemble_mean_near_stationary_mean(self):
        cfg = SimConfig(t_end=30.0, n_steps=30_000)
        paths = simulate_ensemble(ANCHOR, cfg, 400)
        final = np.array([p.values[-1] for p in paths])
        mu = analysis.stationary_moments(ANCHOR).mu
        se = final.std(ddof=1) / np.sqrt(len(final))
        assert abs(final.mean() - mu) < 4 * se

    @pytest.mark.parametrize("scheme", list(Scheme))
    def test_weak_consistency_between_schemes(self, scheme):
        cfg = SimConfig(t_end=30.0, n_steps=15_000, scheme=scheme, master_seed=11)
        final = np.array([p.values[-1] for p in simulate_ensemble(ANCHOR, cfg, 400)])
        mu = analysis.stationary_moments(ANCHOR).mu
        se = final.std(ddof=1) / np.sqrt(len(final))
        assert abs(final.mean() - mu) < 4 * se

    def test_free_flow_paths_decay(self):
        sc = Scenario(ModelParams(c1=1, c2=3, sigma=0.5), 30.0)
        assert analysis.classify_regime(sc).regime is analysis.Regime.FREE_FLOW_STABLE
        cfg = SimConfig(t_end=30.0, n_steps=30_000)
        paths = simulate_ensemble(sc, cfg, 200)
        decayed = np.mean([p.values[-1] < 1e-3 for p in paths])
        assert decayed >= 0.95

    def test_fixed_start(self):
        cfg = SimConfig(t_end=0.1, n_steps=10)
        paths = simulate_ensemble(ANCHOR, cfg, 3, init_policy=FixedValue(42.0))
        assert all(p.values[0] == 42.0 for p in paths)

    def test_uniform_start_range(self):
        cfg = SimConfig(t_end=0.01, n_steps=1)
        starts = [p.values[0] for p in simulate_ensemble(ANCHOR, cfg, 500, UniformDraw(1.0))]
        assert min(starts) >= 1.0 and max(starts) < 150.0

    def test_degenerate_uniform_range_at_n_one(self):
        sc = Scenario(ModelParams(), 1.0)
        path = simulate_ensemble(sc, SimConfig(t_end=0.1, n_steps=10), 1)[0]
        assert 0 < path.values[0] < 1.0

    def test_rejects_bad_start(self):
        with pytest.raises(ValueError):
            simulate_path(ANCHOR, SimConfig(t_end=0.1, n_steps=10), 150.0)
