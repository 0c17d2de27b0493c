"""Coupled multi-process constructions and the jump-time LLN estimator.

The dominating construction runs the real walk and a slower twin that
lives in an environment held above the real one, sharing proposal marks
and jump destinations; every departure refreshes the twin's just-left
site with an exact stationary variable that still dominates the state it
replaces.  The dominated construction restarts all-zero environments at
the walk's own jump times and reruns the tail of the walk inside them,
producing a superadditive table of jump times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bdp import (
    BDParams,
    RateFunction,
    check_strong_ergodic,
    first_jump_state_distribution,
    stationary_distribution,
    sample_dist,
)
from .environment import (
    CoupledEnvironment,
    InitDistSpec,
    LatticeEnvironment,
    RestartField,
    UpperView,
    coalescing_pair,
)
from .rng import (
    BlockStream,
    StreamPool,
    TAG_AUDIT,
    TAG_GENERIC,
    TAG_REFRESH,
    mix64,
    stream_key,
)
from .walk import (
    JumpDistribution,
    MarkField,
    WalkPath,
    embedded_chain,
    simulate_thinning,
    simulate_timechange,
)


class NonMonotonePhi(ValueError):
    pass


class InitNotDominated(ValueError):
    pass


class ConditionsUnmet(ValueError):
    def __init__(self, failures):
        self.failures = list(failures)
        super().__init__("; ".join(self.failures))


def replica_seed(seed: int, rep: int) -> int:
    """Per-replica master seed; workers shard replicas without coordination."""
    return stream_key(seed, TAG_GENERIC, (rep,))


@dataclass
class DominationRecord:
    """Per-jump outcome of one dominating-pair realization."""

    taus: np.ndarray
    taus_dominating: np.ndarray
    refresh_values: np.ndarray
    order_violations: int          # exact checks at every chain event
    audit_checks: int              # extra order checks on a rate-1 time grid
    audit_violations: int

    @property
    def jump_order_violations(self) -> int:
        n = min(len(self.taus), len(self.taus_dominating))
        return int(np.sum(self.taus[:n] > self.taus_dominating[:n]))


class _QuantileRefresher:
    """Stationary refresh coupled above the realized pre-jump state.

    U' is uniform on the quantile interval of the observed state under the
    first-departure law, so F_nu^{-1}(U') is exactly stationary and never
    falls below the observed state.
    """

    def __init__(self, params: BDParams, phi: RateFunction, pool: StreamPool,
                 seed: int):
        self.mu_cdf = np.cumsum(first_jump_state_distribution(params, phi))
        self.nu = stationary_distribution(params, mass_tol=1e-15)
        self.stream = BlockStream(pool, stream_key(seed, TAG_REFRESH, ()))
        self.log: list = []

    def draw(self, observed_state: int) -> int:
        lo = float(self.mu_cdf[observed_state - 1]) if observed_state else 0.0
        hi = float(self.mu_cdf[observed_state])
        u2 = lo + self.stream.next() * (hi - lo)
        w = sample_dist(self.nu, u2)
        self.log.append(w)
        return w


def dominating_array(d: int, params: BDParams, phi: RateFunction,
                     pi: JumpDistribution, init: InitDistSpec, n_jumps: int,
                     seed: int, audit_sites: int = 8) -> DominationRecord:
    """One realization of the walk and its dominating twin.

    Shared marks and destinations; the twin's environment starts from
    quantile-coupled stationary draws above the real one and is refreshed
    at each of its departures.
    """
    if not phi.monotone:
        raise NonMonotonePhi("the dominating construction needs a non-increasing rate")
    if not phi.strictly_positive:
        raise NonMonotonePhi("refresh law needs a strictly positive rate tail")
    if not init.dominated_by_stationary(params):
        raise InitNotDominated("initial law must sit below the stationary law")
    coupled = CoupledEnvironment(d, params, init, InitDistSpec.stationary(),
                                 seed, side=+1)
    pool = coupled.pool
    embedded = embedded_chain(seed, pool, pi, n_jumps)
    marks = MarkField(seed, pool)
    lower_path = simulate_thinning(coupled.lower, phi, None,
                                   {"n_jumps": n_jumps}, marks=marks,
                                   embedded=embedded)
    refresher = _QuantileRefresher(params, phi, pool, seed)
    upper = UpperView(coupled)

    def on_jump(n, pos, tau):
        chain = coupled.upper_site(pos)
        v = chain.state_before(tau)
        chain.refresh(tau, refresher.draw(v))

    upper_path = simulate_thinning(upper, phi, None, {"n_jumps": n_jumps},
                                   marks=marks, embedded=embedded,
                                   on_jump=on_jump)
    # extra order audit on a rate-1 grid over the slow walk's horizon
    audit = BlockStream(pool, stream_key(seed, TAG_AUDIT, ()), kind="exp")
    horizon = float(upper_path.taus[-1])
    sites = [tuple(int(v) for v in row) for row in embedded]
    t = 0.0
    checks = violations = 0
    k = 0
    while True:
        t += audit.next()
        if t > horizon:
            break
        for j in range(min(audit_sites, len(sites))):
            c = sites[(k + j) % len(sites)]
            up = coupled.upper_site(c)
            lo_chain = coupled.lower.site(c)
            if up.horizon < t:
                up.ensure(t)
            lo_chain.ensure(t)
            checks += 1
            if up.state_before(t) < lo_chain.state_before(t):
                violations += 1
        k += 1
    return DominationRecord(
        taus=lower_path.taus,
        taus_dominating=upper_path.taus,
        refresh_values=np.array(refresher.log, dtype=np.int64),
        order_violations=coupled.order_violations(),
        audit_checks=checks,
        audit_violations=violations,
    )


def first_jump_environment_sample(params: BDParams, phi: RateFunction,
                                  replicas: int, seed: int) -> np.ndarray:
    """Origin state at the first departure, stationary start, iid replicas."""
    if not phi.monotone:
        raise NonMonotonePhi("domination statement needs a non-increasing rate")
    pool = StreamPool()
    phi_arr = phi.lookup_array()
    cap = len(phi_arr) - 1
    out = np.empty(replicas, dtype=np.int64)
    for rep in range(replicas):
        env = LatticeEnvironment(1, params, InitDistSpec.stationary(),
                                 replica_seed(seed, rep), pool=pool)
        marks = MarkField(env.seed, pool)
        site = env.site((0,))
        msite = marks.site((0,))
        mi = 0
        while True:
            if mi >= msite.n:
                msite.ensure(msite.t_end + 16.0)
            r = float(msite.times[mi])
            site.ensure(r)
            state = site.state_before(r)
            if msite.uniforms[mi] < phi_arr[state if state < cap else cap]:
                out[rep] = state
                break
            mi += 1
    return out


@dataclass
class SubadditiveTable:
    """Jump-time table L[m, n] over one realization, m <= n."""

    L: np.ndarray
    superadditivity_violations: int
    order_violations: int

    def pairs(self):
        N = self.L.shape[0] - 1
        for m in range(N + 1):
            for n in range(m, N + 1):
                yield m, n, self.L[m, n]


def dominated_array(d: int, params: BDParams, phi: RateFunction,
                    pi: JumpDistribution, N: int, seed: int) -> SubadditiveTable:
    """Restarted all-zero environments below the realized one.

    L[m, n] is the time the restarted walk opened at the m-th jump takes
    to give n-m jumps; L[0, n] is the real walk's tau_n.  Superadditivity
    of L[0, .] holds pathwise and is counted exactly.
    """
    if not phi.monotone:
        raise NonMonotonePhi("the dominated construction needs a non-increasing rate")
    env = LatticeEnvironment(d, params, InitDistSpec.zero(), seed)
    pool = env.pool
    embedded = embedded_chain(seed, pool, pi, N)
    marks = MarkField(seed, pool)
    base = simulate_thinning(env, phi, None, {"n_jumps": N}, marks=marks,
                             embedded=embedded)
    L = np.full((N + 1, N + 1), np.nan)
    L[0, :] = base.taus
    order_violations = 0
    violations = 0
    for m in range(1, N + 1):
        t_m = float(base.taus[m])
        restart = RestartField(env, t_start=t_m, restart_id=m)
        rpath = simulate_thinning(restart, phi, None, {"n_jumps": N - m},
                                  marks=marks, t_start=t_m, embedded=embedded,
                                  embedded_offset=m)
        L[m, m:] = rpath.taus - t_m
        order_violations += restart.order_violations()
        # exact pathwise check on absolute jump times: the restarted walk
        # accepts a superset of marks, so equality of floats is possible
        # and recombining differences would inject 1-ulp noise
        violations += int(np.sum(rpath.taus > base.taus[m:]))
    return SubadditiveTable(L=L, superadditivity_violations=violations,
                            order_violations=order_violations)


def check_mu_conditions(params: BDParams, phi: RateFunction) -> list:
    """Precondition failures for the jump-time LLN, empty when it applies."""
    failures = []
    if not check_strong_ergodic(params)["holds"]:
        failures.append("environment chain is not strongly ergodic")
    if not phi.monotone:
        failures.append("rate function is not non-increasing")
    return failures


def estimate_mu(params: BDParams, phi: RateFunction, pi: JumpDistribution,
                d: int, init: InitDistSpec, n: int, replicas: int, seed: int,
                *, exploratory: bool = False) -> dict:
    """Mean jump time per jump, tau_n / n averaged over replicas.

    Returns the point estimate with a 99% normal CI, the half-horizon
    diagnostic, and the mean first-jump time.
    """
    failures = check_mu_conditions(params, phi)
    if failures and not exploratory:
        raise ConditionsUnmet(failures)
    pool = StreamPool()
    ratios = np.empty(replicas)
    halves = np.empty(replicas)
    first = np.empty(replicas)
    use_timechange = phi.strictly_positive
    for rep in range(replicas):
        env = LatticeEnvironment(d, params, init, replica_seed(seed, rep),
                                 pool=pool, anchored=True)
        if use_timechange:
            path = simulate_timechange(env, phi, pi, {"n_jumps": n})
        else:
            path = simulate_thinning(env, phi, pi, {"n_jumps": n})
        ratios[rep] = path.taus[-1] / n
        halves[rep] = path.taus[n // 2] / max(n // 2, 1)
        first[rep] = path.taus[1]
    mu_hat = float(ratios.mean())
    se = float(ratios.std(ddof=1) / math.sqrt(replicas))
    z = 2.5758293035489004  # 99%
    return {
        "mu_hat": mu_hat,
        "ci": (mu_hat - z * se, mu_hat + z * se),
        "se": se,
        "mu_hat_half_horizon": float(halves.mean()),
        "mean_first_jump_time": float(first.mean()),
        "n": n,
        "replicas": replicas,
        "positive": mu_hat - z * se > 0.0,
        "conditions_unmet": failures,
    }


def count_meetings(path_a: WalkPath, path_b: WalkPath) -> dict:
    """Returns of the difference walk to the origin after an excursion."""
    ta, tb = path_a.taus[1:], path_b.taus[1:]
    merged = np.sort(np.concatenate([ta, tb]))
    ia = np.searchsorted(path_a.taus, merged, side="right") - 1
    ib = np.searchsorted(path_b.taus, merged, side="right") - 1
    equal = np.all(path_a.positions[ia] == path_b.positions[ib], axis=1)
    prev = np.concatenate([[True], equal[:-1]])  # both start at the origin
    meet_mask = equal & ~prev
    return {
        "meetings": int(meet_mask.sum()),
        "meeting_times": merged[meet_mask],
        "events": len(merged),
    }


def difference_walk(d: int, params: BDParams, phi: RateFunction,
                    pi: JumpDistribution, n_steps: int, seed: int,
                    init_a: InitDistSpec | None = None,
                    init_b: InitDistSpec | None = None,
                    share_randomness: bool = False) -> dict:
    """Two walks in coalescing environments with independent marks and steps.

    Each walk gives n_steps jumps; the difference process is scanned at
    every jump of either walk.  With share_randomness both walks use the
    same mark and destination streams (degenerate coupling).
    """
    init_a = InitDistSpec.zero() if init_a is None else init_a
    init_b = InitDistSpec.stationary() if init_b is None else init_b
    pair = coalescing_pair(d, params, init_a, init_b, seed)
    tag_b = 0 if share_randomness else 1
    stop = {"n_jumps": n_steps}
    if phi.strictly_positive:
        path_a = simulate_timechange(pair.lower, phi, pi, stop, xi_tag=0)
        path_b = simulate_timechange(UpperView(pair), phi, pi, stop,
                                     xi_tag=tag_b)
    else:
        marks_a = MarkField(seed, pair.pool, walk_tag=0)
        marks_b = MarkField(seed, pair.pool, walk_tag=tag_b)
        path_a = simulate_thinning(pair.lower, phi, pi, stop, marks=marks_a,
                                   xi_tag=0)
        path_b = simulate_thinning(UpperView(pair), phi, pi, stop,
                                   marks=marks_b, xi_tag=tag_b)
    out = count_meetings(path_a, path_b)
    out["path_a"] = path_a
    out["path_b"] = path_b
    return out
