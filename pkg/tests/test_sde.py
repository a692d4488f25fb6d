import numpy as np
import pytest

from slelab import sde
from slelab.rng import replica_seeds
from slelab.sde import (
    ForcePointSpec,
    SleRunConfig,
    StopRule,
    flow_line_forces,
    sample_driver,
    sample_flow_line_marginal,
)
from slelab.stats import jarque_bera

CHI2_2_CRIT_1PCT = 9.21  # 1% critical value of chi-square with 2 dof


def plain_config(kappa=3.0, T=1.0, dt=1e-3):
    return SleRunConfig(kappa=kappa, start=0.0, forces=[], dt=dt, max_time=T)


class TestDriverBasics:
    def test_grid_shape_and_start(self):
        cfg = plain_config(T=1.0, dt=1e-3)
        run = sample_driver(cfg, seed=1)
        assert len(run.driving) == int(np.ceil(1.0 / 1e-3)) + 1
        assert run.driving.values[0] == 0.0
        assert run.hit is None
        assert run.status == "horizon"

    def test_variance_matches_kappa_T(self):
        kappa, T = 3.0, 1.0
        n = 4000
        cfg = plain_config(kappa=kappa, T=T, dt=2e-3)
        finals = np.array([
            sample_driver(cfg, s).driving.values[-1]
            for s in replica_seeds(123, n)
        ])
        var = finals.var(ddof=1)
        se = var * np.sqrt(2.0 / (n - 1))  # SE of a chi-square variance estimate
        assert abs(var - kappa * T) < 3 * se

    def test_gaussian_increments(self):
        cfg = plain_config(kappa=2.0, T=0.5, dt=1e-3)
        run = sample_driver(cfg, seed=99)
        inc = np.diff(run.driving.values)
        # variance test at the 1% level
        n = inc.size
        ratio = inc.var(ddof=1) / (2.0 * 1e-3)
        assert abs(ratio - 1.0) < 3.5 * np.sqrt(2.0 / (n - 1))
        assert jarque_bera(inc) < CHI2_2_CRIT_1PCT

    def test_determinism(self):
        cfg = plain_config()
        a = sample_driver(cfg, seed=5).driving.values
        b = sample_driver(cfg, seed=5).driving.values
        np.testing.assert_array_equal(a, b)


class TestForcePoints:
    def test_misordered_forces_rejected(self):
        with pytest.raises(ValueError):
            SleRunConfig(kappa=3.0, start=0.0, dt=1e-3, max_time=1.0,
                         forces=[ForcePointSpec("left", 1.0, 2.0)])
        with pytest.raises(ValueError):
            SleRunConfig(kappa=3.0, start=0.0, dt=1e-3, max_time=1.0,
                         forces=[ForcePointSpec("right", -1.0, 2.0)])
        with pytest.raises(ValueError):
            SleRunConfig(kappa=3.0, start=0.0, dt=1e-3, max_time=1.0,
                         forces=[ForcePointSpec("right", 2.0, 2.0),
                                 ForcePointSpec("right", 1.0, 2.0)])

    def test_order_preservation(self):
        cfg = SleRunConfig(
            kappa=8.0 / 3.0, start=0.0, dt=5e-4, max_time=0.5,
            forces=[ForcePointSpec("left", -1.0, 2.0),
                    ForcePointSpec("right", 1.0, 2.0)])
        run = sample_driver(cfg, seed=42)
        vl = run.force_paths[:, 0]
        vr = run.force_paths[:, 1]
        w = run.driving.values
        assert np.all(vl <= w) and np.all(w <= vr)

    def test_hit_interval_probability_one(self):
        kappa = 8.0 / 3.0
        hits = 0
        n = 100
        for s in replica_seeds(7, n):
            cfg = SleRunConfig(
                kappa=kappa, start=1.0, dt=5e-4, max_time=np.inf,
                forces=[ForcePointSpec("right", 2.0, (kappa - 6.0) / 2.0)],
                stop=StopRule.hit_interval(2.0), grow_dt=True)
            run = sample_driver(cfg, s)
            assert run.hit is not None and run.hit.reason == "hit-interval"
            assert run.hit.hit_point > 2.0
            hits += 1
        assert hits == n

    def test_hit_point_inside_interval(self):
        kappa = 3.0
        cfg = SleRunConfig(
            kappa=kappa, start=0.0, dt=5e-4, max_time=np.inf,
            forces=[ForcePointSpec("right", 1.0, (kappa - 6.0) / 2.0)],
            stop=StopRule.hit_interval(1.0), grow_dt=True)
        for s in replica_seeds(17, 20):
            run = sample_driver(cfg, s)
            assert run.hit.hit_point > 1.0
            assert run.hit.driver_at_hit == pytest.approx(
                run.force_paths[-1, 0], abs=1e-4)


class TestFlowLineMarginals:
    def test_force_list_single_curve(self):
        kappa = 3.0
        forces = flow_line_forces(1, [0.0], 1.0, kappa, "odd", [])
        assert len(forces) == 1
        assert forces[0] == ForcePointSpec("right", 1.0, (kappa - 6.0) / 2.0)

    def test_force_list_top_even(self):
        kappa = 8.0 / 3.0
        forces = flow_line_forces(2, [0.0, 1.0], 2.0, kappa, "even", [3.0])
        assert forces[0] == ForcePointSpec("left", 0.0, 2.0)
        assert forces[1] == ForcePointSpec("right", 2.0, (kappa - 2.0) / 2.0)
        assert forces[2] == ForcePointSpec("right", 3.0, -4.0)

    def test_force_list_interior_level(self):
        kappa = 3.0
        forces = flow_line_forces(2, [0.0, 0.5, 1.0], 2.0, kappa, "odd", [3.0])
        sides = [(f.side, f.location, f.weight) for f in forces]
        assert sides == [("left", 0.0, 2.0), ("right", 1.0, 2.0),
                         ("right", 2.0, -1.5), ("right", 3.0, -4.0)]

    def test_absorbed_landing_matches_given_point(self):
        # a -4 force point absorbs the curve: landing equals the point
        kappa = 8.0 / 3.0
        for s in replica_seeds(31, 10):
            trace, hit, run = sample_flow_line_marginal(
                2, [0.0, 1.0], 2.0, kappa, "even", [3.0], seed=s,
                dt=2e-4, endpoints_only=True)
            assert hit.reason in ("hit-interval", "boundary-absorption")
            assert hit.absorbed_at == pytest.approx(3.0)
            assert hit.hit_point == pytest.approx(3.0)
            # the traced tip agrees with the absorber within trace resolution
            assert abs(run.tip() - 3.0) < 0.2

    def test_single_curve_lands_in_interval(self):
        kappa = 3.0
        for s in replica_seeds(13, 20):
            _, hit, _ = sample_flow_line_marginal(
                1, [0.0], 1.0, kappa, "odd", [], seed=s, dt=2e-4,
                endpoints_only=True)
            assert hit.hit_point > 1.0

    def test_odd_top_lands_left_of_first_hitting_point(self):
        kappa = 3.0
        for s in replica_seeds(29, 10):
            _, hit, _ = sample_flow_line_marginal(
                2, [0.0, 1.0], 2.0, kappa, "odd", [4.0], seed=s, dt=2e-4,
                endpoints_only=True)
            assert 2.0 < hit.hit_point < 4.0

    def test_collapsed_prime_end_runs(self):
        kappa = 8.0 / 3.0
        _, hit, run = sample_flow_line_marginal(
            2, [0.0, 0.0], 1.0, kappa, "even", [1.8], seed=2024, dt=2e-4,
            collapsed=True, endpoints_only=True)
        assert hit.hit_point == pytest.approx(1.8, abs=5e-3)
        # prime-end image stays left of the driver throughout
        assert np.all(run.force_paths[:, 0] <= run.driving.values)


class TestRefinement:
    def test_landing_law_accurate_at_coarse_dt(self):
        # landing law at the coarse step already matches the closed-form
        # CDF, which bounds the change under any further dt refinement
        from scipy.stats import beta as beta_dist
        from slelab.stats import ks_statistic

        kappa = 8.0 / 3.0
        n = 600

        def exact_cdf(w):
            y = 1.0 / np.asarray(w)
            return 1.0 - beta_dist.cdf(y, 2.0 / kappa, 2.0 / kappa)

        pts = []
        for s in replica_seeds(4004, n):
            _, hit, _ = sample_flow_line_marginal(
                1, [0.0], 1.0, kappa, "odd", [], seed=s, dt=4e-4,
                endpoints_only=True)
            pts.append(hit.hit_point)
        ks = ks_statistic(np.array(pts), exact_cdf)
        assert ks < 0.07
