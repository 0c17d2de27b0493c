import math

import numpy as np
import pytest

from bdwalk import bdp, stats as st, walk as wk
from bdwalk.environment import InitDistSpec, LatticeEnvironment
from bdwalk.coupling import replica_seed
from bdwalk.rng import StreamPool

from _oracles import srw_no_ascent_probability

P03 = bdp.validate_params([0.3], 0.3)
PHI1 = bdp.rate_one()
PM1 = wk.symmetric_pm1()


class TestKSExponential:
    def test_null_calibration(self):
        passes = 0
        for rep in range(100):
            rng = np.random.default_rng(1000 + rep)
            r = st.ks_exponential_test(rng.exponential(size=10_000), alpha=0.01)
            passes += r.passed
        assert passes >= 98

    def test_power_against_wrong_scale(self):
        rng = np.random.default_rng(4)
        r = st.ks_exponential_test(rng.exponential(scale=2.0, size=10_000))
        assert not r.passed

    def test_constant_sample_rejected(self):
        r = st.ks_exponential_test(np.full(1000, 0.7))
        assert not r.passed

    def test_small_sample_guard(self):
        with pytest.raises(st.SampleTooSmall):
            st.ks_exponential_test(np.ones(50))

    def test_report_recomputable(self):
        rng = np.random.default_rng(5)
        r = st.ks_exponential_test(rng.exponential(size=500))
        assert r.recompute_verdict() == r.verdict


class TestDominance:
    def test_equal_laws_calibration(self):
        passes = 0
        for rep in range(100):
            rng = np.random.default_rng(2000 + rep)
            a = rng.geometric(4 / 7, 10_000) - 1
            b = rng.geometric(4 / 7, 10_000) - 1
            passes += st.dominance_test(a, b, alpha=0.01).passed
        assert passes >= 98

    def test_analytic_ordered_geometrics(self):
        rng = np.random.default_rng(6)
        lower = rng.geometric(11 / 14, 10_000) - 1
        upper = rng.geometric(4 / 7, 10_000) - 1
        assert st.dominance_test(lower, upper).passed

    def test_shift_violation_detected(self):
        rng = np.random.default_rng(7)
        lower = rng.geometric(4 / 7, 10_000)      # shifted up by one
        upper = rng.geometric(4 / 7, 10_000) - 1
        assert not st.dominance_test(lower, upper).passed

    def test_swap_flips_signed_statistic(self):
        rng = np.random.default_rng(8)
        a = rng.geometric(0.5, 2000) - 1
        b = rng.geometric(0.4, 2000) - 1
        fwd = st.dominance_test(a, b)
        rev = st.dominance_test(b, a)
        assert math.isclose(rev.statistic, -fwd.extras["min_excess"],
                            rel_tol=1e-12)


class TestNormality:
    def test_null_1d(self):
        rng = np.random.default_rng(9)
        r = st.normality_test(rng.standard_normal(10_000), [[1.0]])
        assert r.passed

    def test_power_uniform(self):
        rng = np.random.default_rng(10)
        r = st.normality_test(rng.uniform(-1, 1, 10_000), [[1 / 3]])
        assert not r.passed

    def test_null_2d_identity(self):
        rng = np.random.default_rng(11)
        r = st.normality_test(rng.standard_normal((10_000, 2)), np.eye(2))
        assert r.passed and r.extras["rank"] == 2

    def test_singular_sigma_subspace(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal(5000)
        sample = np.stack([x, np.zeros(5000)], axis=1)
        sigma = np.array([[1.0, 0.0], [0.0, 0.0]])
        r = st.normality_test(sample, sigma)
        assert r.passed and r.extras["rank"] == 1


class TestTV:
    def test_cases(self):
        assert st.tv_distance({0: 1.0}, {0: 1.0}) == 0.0
        assert st.tv_distance({0: 1.0}, {1: 1.0}) == 1.0
        assert math.isclose(st.tv_distance({0: .5, 1: .5}, {0: .7, 1: .3}), 0.2)

    def test_empirical_merge(self):
        a = st.EmpiricalDistribution.from_sample([0, 0, 1])
        b = st.EmpiricalDistribution.from_sample([1, 2, 2])
        ab, ba = a.merge(b), b.merge(a)
        assert np.allclose(ab.weights, ba.weights)
        assert ab.n == 6


class TestLLNSlope:
    def test_deterministic_direction(self):
        pool = StreamPool()
        pi = wk.JumpDistribution([[1]], [1.0])
        ends = np.empty((1000, 1))
        for rep in range(1000):
            env = LatticeEnvironment(1, P03, InitDistSpec.zero(),
                                     replica_seed(606, rep), pool=pool)
            path = wk.simulate_timechange(env, PHI1, pi, {"t_end": 1000.0})
            ends[rep] = path.positions[path.jump_count(1000.0)]
        res = st.lln_slope(ends, 1000.0)
        assert abs(res["velocity"][0] - 1.0) < 0.02

    def test_mean_zero_ci_contains_origin(self):
        pool = StreamPool()
        ends = np.empty((2000, 1))
        for rep in range(2000):
            env = LatticeEnvironment(1, P03, InitDistSpec.zero(),
                                     replica_seed(608, rep), pool=pool)
            path = wk.simulate_timechange(env, PHI1, PM1, {"t_end": 300.0})
            ends[rep] = path.positions[path.jump_count(300.0)]
        res = st.lln_slope(ends, 300.0)
        lo, hi = res["ci"]
        assert lo[0] <= 0.0 <= hi[0]


class TestWindowDistribution:
    def test_identity_rate_window_is_product_stationary(self):
        out = st.env_window_distribution(
            P03, PHI1, PM1, 1, InitDistSpec.stationary(), ns=(5,), M=1,
            replicas=30_000, seed=42)
        win = out["windows"][5]
        # fixed a-priori bins: configs over {0..3}^3, remainder pooled
        nu = bdp.stationary_distribution(P03)
        w = nu.weights
        configs = [(a, b, c) for a in range(4) for b in range(4)
                   for c in range(4)]
        probs = np.array([w[a] * w[b] * w[c] for a, b, c in configs])
        counts = np.array([win.counts.get(cfg, 0) for cfg in configs],
                          dtype=float)
        counts = np.append(counts, win.replicas - counts.sum())
        probs = np.append(probs, 1.0 - probs.sum())
        order = np.argsort(-probs)
        rep = st.chi_square_gof_test(counts[order], probs[order], alpha=0.01)
        assert rep.passed, rep.to_json_dict()

    def test_conditions_flagging(self):
        drift = wk.drifted_pm1()
        conds = st.window_conditions(drift, bdp.rate_harmonic(), 1)
        assert conds["any"] and conds["drift"]
        phi0 = bdp.RateFunction(values=(1.0, 0.5), tail=0.0, monotone=True)
        conds0 = st.window_conditions(PM1, phi0, 1)
        assert not conds0["any"]
        out = st.env_window_distribution(
            P03, phi0, PM1, 1, InitDistSpec.zero(), ns=(2,), M=0,
            replicas=50, seed=1)
        assert out["exploratory"]

    def test_marginal_of_window(self):
        out = st.env_window_distribution(
            P03, PHI1, PM1, 1, InitDistSpec.stationary(), ns=(3,), M=1,
            replicas=5000, seed=43)
        win = out["windows"][3]
        marg = win.marginal(1)
        assert abs(sum(marg.values()) - 1.0) < 1e-9
        nu = bdp.stationary_distribution(P03)
        assert abs(marg.get(0, 0.0) - nu.weights[0]) < 0.03

    def test_support_coverage_counts(self):
        counts = {(0, 0): 5, (0, 1): 3, (1, 0): 2}
        win = st.WindowDistribution(M=0, d=1, counts=counts, replicas=10)
        cov = win.support_coverage(P03, threshold=0.1)
        assert cov["required"] >= 1
        assert (0, 0) not in cov["missing"]

    def test_single_site_tail_decays(self):
        # bounded-below rate, centered steps: state law at jump times keeps
        # an exponential-type tail; thresholds (log m)^2 over m = 8,16,32
        phi = bdp.make_rate_function((1.0, 0.6), 0.5)
        out = st.env_window_distribution(
            P03, phi, PM1, 1, InitDistSpec.stationary(), ns=(30,), M=0,
            replicas=30_000, seed=44)
        win = out["windows"][30]
        marg = win.marginal(0)
        def tail(thr):
            return sum(v for k, v in marg.items() if k > thr)
        probs = [tail(math.log(m) ** 2) for m in (8, 16, 32)]
        assert probs[0] >= probs[1] >= probs[2]
        assert probs[0] > probs[2]


class TestLadder:
    def test_hand_trace(self):
        z = [0, 2, 1, 3, 0, -4]
        steps = st.ladder_statistics(z, M=1)
        s1 = steps[0]
        assert (s1.theta_fwd, s1.overshoot, s1.theta_back) == (1, 1.0, 2)
        s2 = steps[1]
        assert s2.upsilon == 2.0 and s2.theta_fwd == 3
        assert s2.theta_back == 4 and s2.excursion == 1

    def test_censored_monotone_path(self):
        z = list(range(0, -20, -1))  # strictly decreasing, never returns
        steps = st.ladder_statistics(z, M=0)
        assert len(steps) == 1
        assert not steps[0].complete and steps[0].excursion is None

    def test_records_strictly_increase(self):
        rng = np.random.default_rng(15)
        for _ in range(30):
            z = np.concatenate([[0], np.cumsum(rng.choice([-1, 1], 400))])
            steps = st.ladder_statistics(z, M=1)
            ups = [s.upsilon for s in steps if s.complete]
            assert all(b > a for a, b in zip(ups, ups[1:]))


class TestOvershootTails:
    def test_sqrt_m_scale_and_exact_oracle(self):
        res = st.overshoot_tails(PM1, L_grid=(0,), m_grid=(16, 64, 256),
                                 replicas=40_000, seed=3)
        for m, p in zip(res["m_grid"], res["survival_plus"]):
            exact = srw_no_ascent_probability(int(m))
            se = math.sqrt(exact * (1 - exact) / 40_000)
            assert abs(p - exact) <= 4 * se + 1e-4, (m, p, exact)
            assert 0.3 <= p * math.sqrt(m) <= 1.5

    def test_unit_steps_cannot_overshoot(self):
        res = st.overshoot_tails(PM1, L_grid=(0, 3), m_grid=(16, 64),
                                 replicas=5000, seed=4, o_grid=(1, 2))
        for L, tails in res["overshoot_plus"].items():
            assert np.all(tails == 0.0)

    def test_heavy_steps_overshoot_slope(self):
        pi = wk.JumpDistribution([[1], [-1], [10], [-10]],
                                 [0.45, 0.45, 0.05, 0.05])
        res = st.overshoot_tails(pi, L_grid=(0, 5), m_grid=(16, 64, 256),
                                 replicas=40_000, seed=5)
        slope, hw = res["slope_overshoot"]
        assert slope + hw <= -1.0, (slope, hw)

    def test_centered_guard(self):
        with pytest.raises(ValueError):
            st.overshoot_tails(wk.drifted_pm1(), (0,), (4,), 100, 1)


class TestIntervalMax:
    def test_decreasing_in_l(self):
        res = st.interval_max_tail(P03, (4, 8, 16), rate=1.0, replicas=8000,
                                   seed=6)
        ps = res["p_exceed"]
        assert all(a > b for a, b in zip(ps, ps[1:])), ps
        assert res["consistent_with_superpolynomial_decay"]

    def test_small_l_sanity(self):
        res = st.interval_max_tail(P03, (2,), rate=1.0, replicas=4000, seed=7)
        assert 0.0 < res["p_exceed"][0] < 1.0
        assert res["thresholds"][0] < 1.0

    def test_rate_monotone_coupling(self):
        slow = st.interval_max_tail(P03, (4, 8), rate=1.0, replicas=4000, seed=8)
        fast = st.interval_max_tail(P03, (4, 8), rate=2.0, replicas=4000, seed=8)
        for a, b in zip(fast["p_exceed"], slow["p_exceed"]):
            assert a <= b
