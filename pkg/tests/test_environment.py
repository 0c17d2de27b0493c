import math

import numpy as np
import pytest

from bdwalk import bdp
from bdwalk.environment import (
    NOT_YET,
    CoupledEnvironment,
    InitDistSpec,
    LatticeEnvironment,
    NonMonotoneQuery,
    UnsupportedDimension,
    coalescing_pair,
)
from bdwalk.rng import StreamPool

from _oracles import chi_square_gof, product_chain_mean_meeting_time

P03 = bdp.validate_params([0.3], 0.3)


def point_mass(k):
    w = [0.0] * k + [1.0]
    return InitDistSpec.product_table(w, c=1.5 * math.exp(0.5 * k), beta=0.5)


class TestLatticeEnvironment:
    def test_zero_init_at_zero(self):
        env = LatticeEnvironment(1, P03, InitDistSpec.zero(), seed=1)
        assert env.state_at((3,), 0.0) == 0

    def test_dimension_guard(self):
        with pytest.raises(UnsupportedDimension):
            LatticeEnvironment(4, P03, InitDistSpec.zero(), seed=1)
        env = LatticeEnvironment(2, P03, InitDistSpec.zero(), seed=1)
        with pytest.raises(UnsupportedDimension):
            env.state_at((1, 2, 3), 0.0)

    def test_monotone_query_clock(self):
        env = LatticeEnvironment(1, P03, InitDistSpec.zero(), seed=1)
        env.state_at((0,), 5.0)
        with pytest.raises(NonMonotoneQuery):
            env.state_at((0,), 4.0)
        env.state_at((1,), 1.0)  # other sites unaffected

    def test_determinism_and_laziness(self):
        def probe(order):
            env = LatticeEnvironment(1, P03, InitDistSpec.stationary(), seed=99)
            out = {}
            for site in order:
                out[site] = [env.state_at((site,), t) for t in (0.5, 2.0, 7.0)]
            return out
        a = probe([0, 5, -3])
        b = probe([-3, 0, 5])
        c = probe([5])
        assert a[0] == b[0] and a[5] == b[5] and a[-3] == b[-3]
        assert a[5] == c[5]

    def test_stationary_init_chi_square(self):
        env = LatticeEnvironment(1, P03, InitDistSpec.stationary(), seed=7)
        draws = np.array([env.state_at((i,), 0.0) for i in range(100_000)])
        nu = bdp.stationary_distribution(P03)
        kmax = 10
        counts = [np.sum(draws == k) for k in range(kmax)]
        counts.append(np.sum(draws >= kmax))
        probs = np.append(nu.weights[:kmax], 1 - nu.weights[:kmax].sum())
        stat, crit, ok = chi_square_gof(counts, probs, alpha=0.01)
        assert ok, (stat, crit)

    def test_stationarity_preserved(self):
        # one field, fresh sites, all queried at the same later time
        env = LatticeEnvironment(1, P03, InitDistSpec.stationary(), seed=21)
        t = 5.0
        draws = np.array([env.state_at((i,), t) for i in range(60_000)])
        nu = bdp.stationary_distribution(P03)
        kmax = 10
        counts = [np.sum(draws == k) for k in range(kmax)]
        counts.append(np.sum(draws >= kmax))
        probs = np.append(nu.weights[:kmax], 1 - nu.weights[:kmax].sum())
        stat, crit, ok = chi_square_gof(counts, probs, alpha=0.01)
        assert ok, (stat, crit)

    def test_zero_init_converges_to_stationary(self):
        # sites are iid, so distinct sites at t = 10^3 give replica draws
        env = LatticeEnvironment(1, P03, InitDistSpec.zero(), seed=13)
        t = 1000.0
        draws = np.array([env.state_at((i,), t) for i in range(100_000)])
        nu = bdp.stationary_distribution(P03)
        kmax = 25
        emp = np.array([(draws == k).mean() for k in range(kmax)])
        true = nu.weights[:kmax]
        tv = 0.5 * (np.abs(emp - true).sum()
                    + abs((draws >= kmax).mean() - (1 - true.sum())))
        assert tv < 0.01, tv


class TestInitSpec:
    def test_product_table_tail_guard(self):
        InitDistSpec.product_table([0.5, 0.3, 0.2], c=2.0, beta=0.5)
        with pytest.raises(ValueError):
            InitDistSpec.product_table([0.1] + [0.0] * 20 + [0.9], c=1.0, beta=1.0)

    def test_dominated_by_stationary(self):
        assert InitDistSpec.zero().dominated_by_stationary(P03)
        assert InitDistSpec.stationary().dominated_by_stationary(P03)
        assert not point_mass(9).dominated_by_stationary(P03)


class TestCoalescingPair:
    def test_equal_starts_coalesce_at_zero(self):
        pair = coalescing_pair(1, P03, InitDistSpec.zero(), InitDistSpec.zero(),
                               seed=3)
        for site in range(20):
            assert pair.coalescence_time((site,), 10.0) == 0.0

    def test_horizon_zero_distinct_starts(self):
        pair = coalescing_pair(1, P03, point_mass(0), point_mass(1), seed=4)
        assert pair.coalescence_time((0,), 0.0) is NOT_YET

    def test_coalesced_permanence_and_identity(self):
        pair = coalescing_pair(1, P03, InitDistSpec.zero(),
                               InitDistSpec.stationary(), seed=5)
        for site in range(30):
            tc = pair.coalescence_time((site,), 500.0)
            assert tc is not NOT_YET
            for t in np.linspace(tc, tc + 50, 7):
                assert pair.upper_state_at((site,), t) == \
                    pair.lower_state_at((site,), t)

    def test_monotone_mode_no_order_violations(self):
        pair = coalescing_pair(1, P03, InitDistSpec.zero(),
                               InitDistSpec.stationary(), seed=6)
        rng = np.random.default_rng(0)
        t_by_site = {}
        for _ in range(10_000):
            site = int(rng.integers(0, 40))
            t = t_by_site.get(site, 0.0) + float(rng.exponential(2.0))
            t_by_site[site] = t
            lo = pair.lower_state_at((site,), t)
            hi = pair.upper_state_at((site,), t)
            assert lo <= hi
        assert pair.order_violations() == 0

    def test_mean_meeting_time_vs_dense_solve(self):
        oracle = product_chain_mean_meeting_time(0.3, 0, 1, cap=60)
        vals = []
        for rep in range(4000):
            pair = coalescing_pair(1, P03, point_mass(0), point_mass(1),
                                   seed=1000 + rep)
            tc = pair.coalescence_time((0,), 4000.0)
            assert tc is not NOT_YET
            vals.append(tc)
        mc = float(np.mean(vals))
        assert abs(mc - oracle) / oracle < 0.05, (mc, oracle)

    def test_tail_decays(self):
        # AllZero vs Stationary meeting-time tail shrinks with the horizon
        survivors = {m: 0 for m in (5, 10, 20, 40)}
        n = 4000
        for rep in range(n):
            pair = coalescing_pair(1, P03, InitDistSpec.zero(),
                                   InitDistSpec.stationary(), seed=77000 + rep)
            tc = pair.coalescence_time((0,), 40.0)
            for m in survivors:
                if tc is NOT_YET or tc > m:
                    survivors[m] += 1
        probs = [survivors[m] / n for m in (5, 10, 20, 40)]
        assert all(a > b for a, b in zip(probs, probs[1:]))


class TestExponentialTailPreserved:
    def test_tail_bound_uniform_over_time(self):
        init = InitDistSpec.product_table(
            [0.45, 0.25, 0.15, 0.08, 0.04, 0.02, 0.01], c=2.0, beta=0.6)
        pool = StreamPool()
        for t in (2.0, 10.0, 40.0):
            env = LatticeEnvironment(1, P03, init, seed=int(t * 1000) + 5,
                                     pool=pool)
            draws = np.array([env.state_at((i,), t) for i in range(20_000)])
            grid = np.arange(0, 8)
            logp = []
            for nlev in grid:
                pn = (draws > nlev).mean()
                logp.append(math.log(max(pn, 1e-12)))
            slope = np.polyfit(grid, logp, 1)[0]
            assert slope < -0.3, (t, slope)
