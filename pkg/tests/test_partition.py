import math

import numpy as np
import pytest

from slelab.partition import (
    HittingPoints,
    MarkedConfig,
    StepCancellationError,
    bpz_residual,
    check_partition_identity,
    eval_R,
    limit_probability,
    log_beta,
    log_density_r,
    log_density_rho,
    normalize,
    pair_partitions,
    partition_sign,
    scaling_degree,
    w1_closed_form_log,
)


class TestDensities:
    def test_odd_density_hand_value(self):
        # N=2, kappa=8/3, x=(0,1), x_3=2, z=(3,):
        # (3-0)^{-3/2} (3-1)^{-3/2} (3-2)^{5/4} = 6^{-3/2}
        cfg = MarkedConfig(kappa=8.0 / 3.0, xs=[0.0, 1.0], x_next=2.0)
        val = log_density_r(cfg, [3.0])
        assert val == pytest.approx(math.log(6.0 ** -1.5), abs=1e-12)
        assert math.exp(val) == pytest.approx(0.0680414, abs=1e-7)

    def test_count_zero_log_density_is_zero(self):
        cfg = MarkedConfig(kappa=3.0, xs=[0.0], x_next=1.0)
        assert log_density_r(cfg, []) == 0.0

    def test_misordered_gives_minus_inf(self):
        cfg = MarkedConfig(kappa=3.0, xs=[0.0, 0.5, 1.0, 1.5], x_next=2.0)
        assert log_density_r(cfg, [4.0, 3.0]) == -np.inf
        assert log_density_rho(cfg, [1.0, 3.0]) == -np.inf

    def test_even_density_single_point(self):
        kappa = 3.0
        cfg = MarkedConfig(kappa=kappa, xs=[0.0], x_next=1.0)
        w = 2.5
        expect = (-4 / kappa) * math.log(w) + ((2 - kappa) / kappa) * math.log(w - 1)
        assert log_density_rho(cfg, [w]) == pytest.approx(expect, rel=1e-14)

    def test_collapsed_matches_repeated_points(self):
        kappa = 8.0 / 3.0
        cfg = MarkedConfig(kappa=kappa, xs=[0.5, 0.5, 0.5], x_next=1.0,
                           collapsed=True)
        z = [1.7]
        expect = (-4 * 3 / kappa) * math.log(1.7 - 0.5) \
            + ((6 - kappa) / kappa) * math.log(0.7)
        assert log_density_r(cfg, z) == pytest.approx(expect, rel=1e-14)

    def test_hitting_points_validation(self):
        with pytest.raises(ValueError):
            HittingPoints("odd", [2.0, 1.0])
        with pytest.raises(ValueError):
            HittingPoints("sideways", [1.0])


class TestNormalize:
    def test_count_zero_exact_one(self):
        cfg = MarkedConfig(kappa=3.0, xs=[0.0], x_next=1.0)
        z = normalize(cfg, "odd")
        assert z.log_value == 0.0 and z.std_error == 0.0
        assert z.method == "closed-form"

    def test_w1_quadrature_matches_closed_form(self):
        for kappa in (8.0 / 3.0, 3.0, 2.2):
            cfg = MarkedConfig(kappa=kappa, xs=[-0.3], x_next=1.2)
            w = normalize(cfg, "even")
            expect = w1_closed_form_log(-0.3, 1.2, kappa)
            assert abs(math.expm1(w.log_value - expect)) < 1e-8

    def test_quadrature_vs_monte_carlo(self):
        cfg = MarkedConfig(kappa=3.0, xs=[0.0, 1.0], x_next=2.0)
        q = normalize(cfg, "odd")
        mc = normalize(cfg, "monte-carlo" == "x" and "odd" or "odd",
                       method="monte-carlo", budget=400_000, seed=5)
        diff = abs(math.expm1(q.log_value - mc.log_value))
        assert diff < 3.0 * math.hypot(q.std_error, mc.std_error) + 1e-6

    def test_two_point_even_family_quadrature(self):
        # N=3 even family: two-dimensional nested quadrature vs MC
        cfg = MarkedConfig(kappa=3.0, xs=[0.0, 0.7, 1.5], x_next=2.2)
        q = normalize(cfg, "even", epsrel=1e-9)
        mc = normalize(cfg, "even", method="monte-carlo", budget=600_000, seed=9)
        diff = abs(math.expm1(q.log_value - mc.log_value))
        assert diff < 3.0 * math.hypot(q.std_error, mc.std_error) + 1e-5


class TestIdentity:
    def test_identity_exact_n1(self):
        # lhs = B(2/k,2/k) * Z_1 = B; rhs = gap^{2/k} * W_1
        for kappa in (8.0 / 3.0, 3.0):
            cfg = MarkedConfig(kappa=kappa, xs=[0.1], x_next=1.4)
            chk = check_partition_identity(cfg)
            assert chk.rel_err <= 1e-10

    @pytest.mark.parametrize("kappa,xs,x_next", [
        (8.0 / 3.0, [0.0, 1.0], 2.0),
        (3.0, [-0.8, 0.9], 1.7),
        (3.0, [0.0, 0.6, 1.3], 2.1),
    ])
    def test_identity_quadrature(self, kappa, xs, x_next):
        cfg = MarkedConfig(kappa=kappa, xs=xs, x_next=x_next)
        chk = check_partition_identity(cfg)
        assert chk.rel_err <= max(3 * chk.rel_sigma, 1e-7)

    def test_identity_monte_carlo(self):
        cfg = MarkedConfig(kappa=8.0 / 3.0, xs=[0.0, 1.0], x_next=2.0)
        chk = check_partition_identity(cfg, method="monte-carlo",
                                       budget=300_000, seed=2)
        assert chk.rel_err <= 3 * chk.rel_sigma

    def test_translation_invariance(self):
        cfg = MarkedConfig(kappa=3.0, xs=[0.0, 1.0], x_next=2.0)
        shifted = MarkedConfig(kappa=3.0, xs=[5.0, 6.0], x_next=7.0)
        a = check_partition_identity(cfg)
        b = check_partition_identity(shifted)
        assert abs(a.rel_err - b.rel_err) < 1e-9
        za = normalize(cfg, "odd")
        zb = normalize(shifted, "odd")
        assert abs(math.expm1(za.log_value - zb.log_value)) < 1e-9

    def test_homogeneity_degree(self):
        lam = 2.5
        for parity in ("odd", "even"):
            cfg = MarkedConfig(kappa=3.0, xs=[0.2, 1.0], x_next=2.0)
            big = MarkedConfig(kappa=3.0, xs=[lam * 0.2, lam * 1.0],
                               x_next=lam * 2.0)
            a = normalize(cfg, parity)
            b = normalize(big, parity)
            deg = scaling_degree(cfg, parity)
            assert b.log_value - a.log_value == pytest.approx(
                deg * math.log(lam), abs=1e-7)

    def test_overflow_guard_extreme_config(self):
        cfg = MarkedConfig(kappa=3.0, xs=[1e8, 2e8], x_next=3e8)
        chk = check_partition_identity(cfg)
        assert math.isfinite(chk.log_lhs) and math.isfinite(chk.log_rhs)
        assert chk.rel_err <= 1e-7


class TestPairPartitions:
    def test_counts(self):
        assert len(pair_partitions(0)) == 1
        assert len(pair_partitions(1)) == 1
        assert len(pair_partitions(2)) == 3
        assert len(pair_partitions(3)) == 15

    def test_signs(self):
        assert partition_sign(((1, 3), (2, 4))) == -1
        assert partition_sign(((1, 2), (3, 4))) == +1
        assert partition_sign(((1, 4), (2, 3))) == +1

    def test_r1(self):
        assert eval_R(np.array([0.0]), 1.0) == pytest.approx(1.0)

    def test_r2_hand_value(self):
        # single pairing {1,2}: (2*2 - 0 - 1)/(1 - 0) = 3, prefactor 1/sqrt(2)
        assert eval_R(np.array([0.0, 1.0]), 2.0) == pytest.approx(3 / math.sqrt(2))
        assert eval_R(np.array([0.0, 1.0]), 2.0) == pytest.approx(2.1213203, abs=1e-7)

    def test_r3_against_direct_formula(self):
        y = np.array([0.1, 0.8, 1.4])
        yn = 2.3

        def F(a, b):
            return (2 * yn - y[a] - y[b]) / (y[b] - y[a])

        pref = np.prod(yn - y) ** -0.5
        expect = pref * (F(0, 1) - F(0, 2) + F(1, 2))
        assert eval_R(y, yn) == pytest.approx(expect, rel=1e-13)

    def test_vectorised_matches_scalar(self):
        rng = np.random.default_rng(7)
        ys = np.sort(rng.uniform(0, 1, size=(40, 4)), axis=1)
        yn = 1.5 + rng.uniform(0, 1, size=40)
        vec = eval_R(ys, yn)
        for k in range(40):
            assert vec[k] == pytest.approx(eval_R(ys[k], yn[k]), rel=1e-12)

    def test_positivity_random_configs(self):
        rng = np.random.default_rng(123)
        for n in (1, 2, 3, 4, 5):
            ys = np.sort(rng.uniform(-3, 3, size=(200, n)), axis=1)
            yn = ys[:, -1] + rng.uniform(0.05, 4.0, size=200)
            assert np.all(eval_R(ys, yn) > 0)

    def test_confluence_to_lower_rank(self):
        # (y_{N+1} - y_N)^{1/2} R_N -> R_{N-1}(y_1..y_{N-1}; y_N)
        for ys, yn in (([0.0, 1.0], 2.0), ([0.0, 0.7, 1.5], 2.4)):
            ys = np.array(ys)
            gap = 1e-6
            ys2 = ys.copy()
            ys2[-1] = yn - gap
            lhs = math.sqrt(gap) * eval_R(ys2, yn)
            rhs = eval_R(ys[:-1], ys2[-1])
            assert abs(lhs - rhs) / abs(rhs) < 1e-4

    def test_size_guard(self):
        with pytest.raises(ValueError):
            eval_R(np.arange(14, dtype=float), 20.0)


class TestBpz:
    def test_n1_analytic_zero(self):
        # R_1 = (y2-y1)^{-1/2}: (3/2)(3/4) - 1 - 1/8 = 0 exactly
        res = bpz_residual(np.array([0.0]), 1.0, i=1, h=1e-4)
        assert abs(res) <= 1e-7

    def test_n2_second_order_decay(self):
        ys = np.array([0.3, 1.1])
        yn = 2.0
        r1 = bpz_residual(ys, yn, i=1, h=2e-3)
        r2 = bpz_residual(ys, yn, i=1, h=1e-3)
        assert 3.5 <= abs(r1 / r2) <= 4.5

    def test_n3_residual_small(self):
        res = bpz_residual(np.array([0.0, 0.8, 1.7]), 2.6, i=2, h=1e-3)
        assert abs(res) <= 1e-4

    def test_all_coordinates_satisfy_pde(self):
        ys = np.array([0.1, 0.9, 1.6, 2.2])
        for i in (1, 2, 3, 4):
            assert abs(bpz_residual(ys, 3.0, i=i, h=1e-3)) < 5e-4

    def test_cancellation_detector(self):
        with pytest.raises(StepCancellationError):
            bpz_residual(np.array([0.3, 1.1]), 2.0, i=1, h=1e-12)


class TestLimitProbability:
    def test_n1_exactly_one(self):
        # gap^{1/6} * B^{-1} * W_1 / R_1 = gap^{1/6 - 2/3 + 1/2} = 1
        for gap in (1.0, 0.37, 5.0):
            res = limit_probability(np.array([0.0]), gap)
            assert res.value == pytest.approx(1.0, abs=1e-9)

    def test_value_in_unit_interval(self):
        rng = np.random.default_rng(11)
        for n in (2, 3):
            for _ in range(5):
                ys = np.sort(rng.uniform(-2, 2, size=n))
                while np.min(np.diff(ys)) < 0.2:
                    ys = np.sort(rng.uniform(-2, 2, size=n))
                yn = ys[-1] + rng.uniform(0.3, 3.0)
                res = limit_probability(ys, yn)
                assert 0.0 < res.value <= 1.0 + 1e-12

    def test_symmetric_config_routes_agree_mc(self):
        res = limit_probability(np.array([-0.9, 0.9]), 2.0,
                                method="monte-carlo", budget=400_000)
        assert res.rel_diff <= 3 * 2e-2  # generous; internal check is tighter

    def test_scale_invariance_at_kappa3(self):
        ys = np.array([-0.5, 0.8])
        a = limit_probability(ys, 1.9).value
        b = limit_probability(3.0 * ys, 3.0 * 1.9).value
        assert a == pytest.approx(b, rel=1e-8)
