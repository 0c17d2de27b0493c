"""Single birth-and-death chain: validation, analytics, and exact simulation.

The chain lives on the nonnegative integers with birth rate p_n and death
rate q_n = 1 - p_n (no death at 0).  Parameters are an explicit table for
n < len(table) plus a constant tail, so every infinite sum below closes
with a geometric remainder instead of a truncation error.

Because p_n + q_n = 1 everywhere, the chain is simulated uniformized at
rate 1: holding times are Exp(1), an event at state n moves up with
probability p_n, down with probability q_n, and at 0 a down proposal is a
no-op.  The recorded trajectory keeps only real state changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .rng import StreamPool, TAG_SITE, stream_key


class ParamError(ValueError):
    """Base for parameter validation failures."""


class OutOfRange(ParamError):
    pass


class ViolatesHalf(ParamError):
    pass


class ZeroInfimum(ParamError):
    pass


class TailDivergent(ParamError):
    pass


class NotErgodic(ValueError):
    pass


class NotStronglyErgodic(ValueError):
    pass


class ZeroRateInsideSupport(ValueError):
    pass


class NotErgodicModified(ValueError):
    pass


@dataclass(frozen=True)
class BDParams:
    """Birth probabilities: table for n < len(table), constant tail after.

    Death rates are always the complement and are never stored.
    Construct through :func:`validate_params`.
    """

    table: tuple
    tail: float
    homogeneous: bool = False  # cached at validation; hot loops branch on it

    def p(self, n: int) -> float:
        return self.table[n] if n < len(self.table) else self.tail

    def q(self, n: int) -> float:
        return 1.0 - self.p(n)

    @property
    def n_tab(self) -> int:
        return len(self.table)

    def p_array(self, n_max: int) -> np.ndarray:
        """p_0..p_{n_max} as an array."""
        out = np.full(n_max + 1, self.tail)
        k = min(len(self.table), n_max + 1)
        out[:k] = self.table[:k]
        return out

    def to_json_dict(self) -> dict:
        return {"p_table": list(self.table), "p_tail": self.tail}

    @staticmethod
    def from_json_dict(d: dict) -> "BDParams":
        return validate_params(d["p_table"], d["p_tail"])


def validate_params(table, tail: float) -> BDParams:
    """Check the standing assumptions and return the validated parameters.

    Raises OutOfRange for entries outside (0,1), ViolatesHalf when a birth
    probability exceeds its death probability (or the tail sits exactly on
    the null-recurrent boundary 1/2, where no sum below converges), and
    ZeroInfimum when inf_n p_n would be 0.
    """
    table = tuple(float(v) for v in table)
    tail = float(tail)
    if not table:
        raise ParamError("empty table")
    for v in (*table, tail):
        if not (0.0 < v < 1.0):
            raise OutOfRange(f"p={v} outside (0,1)")
    for v in table:
        if v > 0.5:
            raise ViolatesHalf(f"table entry p={v} > 1/2")
    if tail > 0.5:
        raise ViolatesHalf(f"tail p={tail} > 1/2")
    if tail == 0.5:
        raise ViolatesHalf("tail p = 1/2: null-recurrent boundary, sums diverge")
    if min(min(table), tail) <= 0.0:
        raise ZeroInfimum("inf p = 0")
    return BDParams(table=table, tail=tail,
                    homogeneous=all(v == tail for v in table))


def param_constants(params: BDParams) -> dict:
    """Reported constants: inf p_n and sup rho_n over table and tail."""
    ps = (*params.table, params.tail)
    rhos = [p / (1.0 - p) for p in ps]
    return {"inf_p": min(ps), "sup_rho": max(rhos)}


# ---------------------------------------------------------------------------
# Ratio sequences and the two ergodicity conditions
# ---------------------------------------------------------------------------

def ratio_sequences(params: BDParams, N: int) -> dict:
    """rho_n, R_n, S_n for n <= N with the geometric tail closed out exactly.

    R_0 = 1, R_n = prod_{i=1..n} rho_i, S_n = sum_{i>=n} R_i.  The sum is
    table partial sums plus R_m/(1-rho_tail) from the first index m where
    the ratio is constant.
    """
    if N < 0:
        raise ValueError("N must be >= 0")
    rho_t = params.tail / (1.0 - params.tail)
    if rho_t >= 1.0:
        raise TailDivergent("tail rho >= 1")
    m = max(N, params.n_tab, 1)
    rho = np.array([params.p(n) / params.q(n) for n in range(m + 1)])  # rho[0] unused
    R = np.ones(m + 1)
    for n in range(1, m + 1):
        R[n] = R[n - 1] * rho[n]
    S = np.zeros(m + 1)
    S[m] = R[m] / (1.0 - rho_t)
    for n in range(m - 1, -1, -1):
        S[n] = R[n] + S[n + 1]
    tail_bound = R[m] * rho_t / (1.0 - rho_t)
    return {
        "rho": rho[: N + 1],
        "R": R[: N + 1],
        "S": S[1: N + 1] if N >= 1 else np.zeros(0),
        "S0": S[0],
        "tail_bound": tail_bound,
        "_R_full": R,
        "_S_full": S,
        "_m": m,
    }


def check_ergodic(params: BDParams, tol: float = 0.0) -> dict:
    """Decide sum_{n>=1} prod_{i=1..n} p_{i-1}/q_i < infinity; report the value.

    With a constant tail the ratio u_{n+1}/u_n equals rho_tail from
    n = n_tab on, so the remainder is geometric and exact.
    """
    rho_t = params.tail / (1.0 - params.tail)
    if rho_t >= 1.0:
        return {"holds": False, "value": math.inf}
    m = max(params.n_tab, 1)
    u = 1.0
    total = 0.0
    for n in range(1, m + 1):
        u *= params.p(n - 1) / params.q(n)
        total += u
    total += u * rho_t / (1.0 - rho_t)
    return {"holds": True, "value": total}


def check_strong_ergodic(params: BDParams, tol: float = 0.0) -> dict:
    """Evaluate sum_{n>=1} S_n^2 / R_n with the closed geometric remainder.

    For n >= n_tab, S_n = R_n/(1-rho_t), so the terms are R_n/(1-rho_t)^2
    and the remainder sums to S_m/(1-rho_t)^2.
    """
    rho_t = params.tail / (1.0 - params.tail)
    if rho_t >= 1.0:
        return {"holds": False, "value": math.inf}
    m = max(params.n_tab, 1)
    seq = ratio_sequences(params, m)
    R, S = seq["_R_full"], seq["_S_full"]
    total = sum(S[n] ** 2 / R[n] for n in range(1, m))
    total += S[m] / (1.0 - rho_t) ** 2
    return {"holds": True, "value": total}


# ---------------------------------------------------------------------------
# Stationary distribution
# ---------------------------------------------------------------------------

@dataclass
class DistTable:
    """Probability weights on {0..len-1} plus the exactly-known tail mass."""

    weights: np.ndarray
    tail_mass: float
    tol: float = 1e-12
    tail_ratio: float = 0.0  # weights continue geometrically with this ratio

    def __post_init__(self):
        if np.any(self.weights < 0):
            raise ValueError("negative weight")
        s = float(self.weights.sum()) + self.tail_mass
        if not (1.0 - self.tol <= s <= 1.0 + self.tol):
            raise ValueError(f"mass {s} outside tolerance")

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.weights)

    def mean(self) -> float:
        n = np.arange(len(self.weights))
        m = float((n * self.weights).sum())
        if self.tail_mass > 0 and self.tail_ratio > 0:
            # sum_{n>=L} n w_L r^{n-L} with w_L r/(1-r)... tail starts at L
            L = len(self.weights)
            r = self.tail_ratio
            w_L = self.tail_mass * (1.0 - r)
            m += w_L * (L / (1.0 - r) + r / (1.0 - r) ** 2)
        return m

    def to_json_dict(self) -> dict:
        return {"weights": [float(w) for w in self.weights],
                "tail_mass": float(self.tail_mass)}


def stationary_distribution(params: BDParams, mass_tol: float = 1e-12) -> DistTable:
    """nu_n proportional to prod_{i=1..n} p_{i-1}/q_i, geometric past the table.

    The table is extended until the residual mass drops below mass_tol;
    the residual is recorded, not discarded.  Detailed balance
    nu_n p_n = nu_{n+1} q_{n+1} holds by construction.
    """
    erg = check_ergodic(params)
    if not erg["holds"]:
        raise NotErgodic("ergodicity sum diverges")
    rho_t = params.tail / (1.0 - params.tail)
    Z = 1.0 + erg["value"]
    m = max(params.n_tab, 1)
    u = [1.0]
    for n in range(1, m + 1):
        u.append(u[-1] * params.p(n - 1) / params.q(n))
    # extend geometrically until residual < mass_tol
    resid = u[-1] * rho_t / (1.0 - rho_t) / Z
    while resid >= mass_tol and u[-1] > 0.0:
        u.append(u[-1] * rho_t)
        resid = u[-1] * rho_t / (1.0 - rho_t) / Z
    w = np.array(u) / Z
    return DistTable(weights=w, tail_mass=resid, tol=1e-9, tail_ratio=rho_t)


def detailed_balance_error(params: BDParams, dist: DistTable) -> float:
    """Max relative detailed-balance error over the table (float arithmetic)."""
    w = dist.weights
    worst = 0.0
    for n in range(len(w) - 1):
        lhs = w[n] * params.p(n)
        rhs = w[n + 1] * params.q(n + 1)
        if rhs != 0:
            worst = max(worst, abs(lhs - rhs) / rhs)
    return worst


def detailed_balance_error_exact(params: BDParams, n_max: int = 60) -> float:
    """Detailed balance cross-checked in exact rational arithmetic.

    Every float is a dyadic rational, so Fraction conversion is exact.
    Returns the max relative error of the float stationary table against
    the exact rational one.
    """
    dist = stationary_distribution(params)
    pf = [Fraction(params.p(n)) for n in range(n_max + 1)]
    u = [Fraction(1)]
    for n in range(1, n_max + 1):
        u.append(u[-1] * pf[n - 1] / (1 - pf[n]))
    # rational detailed balance of u is exact by construction; compare ratios
    worst = 0.0
    k = min(n_max, len(dist.weights) - 1)
    for n in range(1, k + 1):
        exact = u[n] / u[0]
        approx = Fraction(float(dist.weights[n])) / Fraction(float(dist.weights[0]))
        if exact != 0:
            worst = max(worst, abs(float((approx - exact) / exact)))
    return worst


# ---------------------------------------------------------------------------
# Hitting-time moments of the embedded chain
# ---------------------------------------------------------------------------

def hitting_time_mean(params: BDParams, n: int) -> float:
    """Expected steps of the embedded chain from n down to n-1.

    Closed form (1/R_{n-1}) sum_{l>=n} R_{l-1}/q_l with the geometric tail
    folded in; satisfies T_n = 1/q_n + rho_n T_{n+1}.
    """
    if n < 1:
        raise ValueError("n >= 1")
    if not check_ergodic(params)["holds"]:
        raise NotErgodic("ergodicity sum diverges")
    m = max(n, params.n_tab)
    seq = ratio_sequences(params, m)
    R, S = seq["_R_full"], seq["_S_full"]
    q_t = 1.0 - params.tail
    part = sum(R[l - 1] / params.q(l) for l in range(n, m))
    part += S[m - 1] / q_t
    return part / R[n - 1]


def hitting_second_moment(params: BDParams) -> float:
    """Second moment of the first-passage step count from 1 to 0.

    S_1 = sum_l sigma_l R_{l-1}, sigma_n = s_n/q_n with
    s_n = 1 + 2 p_n (T_n + T_{n+1} + T_n T_{n+1}); constant past the table.
    """
    strong = check_strong_ergodic(params)
    if not strong["holds"]:
        raise NotStronglyErgodic("infinite")
    m = max(params.n_tab, 1)
    seq = ratio_sequences(params, m)
    R, S = seq["_R_full"], seq["_S_full"]
    q_t, p_t = 1.0 - params.tail, params.tail
    T = {k: hitting_time_mean(params, k) for k in range(1, m + 2)}
    total = 0.0
    for l in range(1, m):
        s_l = 1.0 + 2.0 * params.p(l) * (T[l] + T[l + 1] + T[l] * T[l + 1])
        total += (s_l / params.q(l)) * R[l - 1]
    T_t = 1.0 / (q_t - p_t)
    s_t = 1.0 + 2.0 * p_t * (2.0 * T_t + T_t * T_t)
    total += (s_t / q_t) * S[m - 1]
    return total


def stationary_mean_hitting(params: BDParams) -> float:
    """E(T_0) starting from the stationary law: sum_k T_k nu([k, inf))."""
    strong = check_strong_ergodic(params)
    if not strong["holds"]:
        raise NotStronglyErgodic("infinite")
    rho_t = params.tail / (1.0 - params.tail)
    m = max(params.n_tab, 1)
    erg = check_ergodic(params)
    Z = 1.0 + erg["value"]
    u = [1.0]
    for n in range(1, m + 1):
        u.append(u[-1] * params.p(n - 1) / params.q(n))
    total = 0.0
    head = u[0] / Z
    for k in range(1, m):
        total += hitting_time_mean(params, k) * (1.0 - head)
        head += u[k] / Z
    T_t = 1.0 / ((1.0 - params.tail) - params.tail)
    total += T_t * (u[m] / Z) / (1.0 - rho_t) ** 2
    return total


# ---------------------------------------------------------------------------
# Jump-rate function and the rate-modified chain
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFunction:
    """Jump-rate lookup: table for n < len(values), constant (maybe 0) tail.

    values[0] must be 1 and everything lies in [0,1]; zeros are legal only
    on the tail.  monotone flags whether the function is non-increasing,
    which several couplings require.
    """

    values: tuple
    tail: float
    monotone: bool = field(default=False, compare=False)

    def __call__(self, n: int) -> float:
        return self.values[n] if n < len(self.values) else self.tail

    @property
    def strictly_positive(self) -> bool:
        return self.tail > 0.0

    @property
    def inf_value(self) -> float:
        return min(min(self.values), self.tail)

    @property
    def support_end(self) -> int | None:
        """First n with rate 0 forever after, None if always positive."""
        return None if self.tail > 0.0 else len(self.values)

    def lookup_array(self, cap: int = 512) -> np.ndarray:
        """phi evaluated on 0..cap, tail value beyond the table."""
        out = np.full(cap + 1, self.tail)
        k = min(len(self.values), cap + 1)
        out[:k] = self.values[:k]
        return out

    def to_json_dict(self) -> dict:
        return {"table": list(self.values), "tail": self.tail}


def make_rate_function(values, tail: float) -> RateFunction:
    values = tuple(float(v) for v in values)
    tail = float(tail)
    if not values or values[0] != 1.0:
        raise ValueError("rate table must start at 1")
    for v in (*values, tail):
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"rate {v} outside [0,1]")
    if any(v == 0.0 for v in values):
        raise ValueError("zero rate inside the table; zeros belong to the tail")
    mono = all(values[i + 1] <= values[i] for i in range(len(values) - 1)) \
        and tail <= values[-1]
    return RateFunction(values=values, tail=tail, monotone=mono)


def rate_one() -> RateFunction:
    """The identity rate: every jump proposal is accepted."""
    return make_rate_function((1.0,), 1.0)


def rate_harmonic(n_table: int = 64) -> RateFunction:
    """phi(n) = 1/(n+1) up to the table end, constant after."""
    vals = tuple(1.0 / (n + 1) for n in range(n_table))
    return make_rate_function(vals, 1.0 / n_table)


def rate_powers_of_two(n_table: int = 64) -> RateFunction:
    """phi(n) = 2^-n up to the table end, constant after."""
    vals = tuple(2.0 ** -n for n in range(n_table))
    return make_rate_function(vals, 2.0 ** -(n_table - 1))


def modified_params(params: BDParams, phi: RateFunction) -> dict:
    """Rates of the chain whose generator is diag(1/phi) times the original.

    Birth p_n/phi(n), death q_n/phi(n).  With a zero rate tail the state
    space is cut to {0..n0-1} with the top birth removed (reflection).
    """
    n0 = phi.support_end
    if n0 is not None and n0 < 1:
        raise ZeroRateInsideSupport("rate vanishes at 0")
    size = n0 if n0 is not None else max(params.n_tab, len(phi.values)) + 1
    birth = [params.p(n) / phi(n) for n in range(size)]
    death = [params.q(n) / phi(n) for n in range(1, size)]
    if n0 is not None:
        birth[n0 - 1] = 0.0
    return {"birth": birth, "death": death, "finite": n0 is not None,
            "size_hint": size}


def modified_stationary(params: BDParams, phi: RateFunction,
                        mass_tol: float = 1e-12) -> DistTable:
    """Stationary law of the modified chain: weights proportional to phi(n) nu_n.

    The telescoping product of the modified birth/death ratios leaves
    exactly phi(n)/phi(0) times the original product.
    """
    if not check_ergodic(params)["holds"]:
        raise NotErgodicModified("base chain not ergodic")
    rho_t = params.tail / (1.0 - params.tail)
    n0 = phi.support_end
    if n0 is not None:
        w = np.empty(n0)
        u = 1.0
        w[0] = phi(0)
        for n in range(1, n0):
            u *= params.p(n - 1) / params.q(n)
            w[n] = phi(n) * u
        w /= w.sum()
        return DistTable(weights=w, tail_mass=0.0, tol=1e-9, tail_ratio=0.0)
    m = max(params.n_tab, len(phi.values), 1)
    u = [1.0]
    for n in range(1, m + 1):
        u.append(u[-1] * params.p(n - 1) / params.q(n))
    w = [phi(n) * u[n] for n in range(m + 1)]
    r = rho_t  # ratio past m: phi constant there, u geometric
    Z = sum(w) + w[-1] * r / (1.0 - r)
    resid = w[-1] * r / (1.0 - r) / Z
    while resid >= mass_tol and w[-1] > 0.0:
        w.append(w[-1] * r)
        resid = w[-1] * r / (1.0 - r) / Z
    return DistTable(weights=np.array(w) / Z, tail_mass=resid, tol=1e-9,
                     tail_ratio=r)


def cdf_dominates(lower: DistTable, upper: DistTable, slack: float = 1e-12) -> bool:
    """True when CDF(lower) >= CDF(upper) - slack on the joint truncation.

    That is the stochastic-order statement "lower is dominated by upper".
    """
    k = min(len(lower.weights), len(upper.weights))
    cl, cu = lower.cdf()[:k], upper.cdf()[:k]
    return bool(np.all(cl >= cu - slack))


def first_jump_state_distribution(params: BDParams, phi: RateFunction,
                                  n_states: int | None = None) -> np.ndarray:
    """Law of the chain state at the walker's first departure, stationary start.

    Equals the stationary law pushed through the resolvent of the modified
    generator at 1 (the modified chain run for an independent Exp(1) time).
    Solved as a truncated tridiagonal system; the result is clipped,
    normalized, and forced below the stationary law in CDF, all at the
    1e-12 level the truncation already guarantees.
    """
    if not phi.strictly_positive:
        raise ValueError("first-jump law requires a strictly positive rate tail")
    nu = stationary_distribution(params, mass_tol=1e-15)
    N = max(len(nu.weights) + 40, 80) if n_states is None else n_states
    nu_vec = np.zeros(N)
    k = min(N, len(nu.weights))
    nu_vec[:k] = nu.weights[:k]
    nu_vec /= nu_vec.sum()
    birth = np.array([params.p(n) / phi(n) for n in range(N)])
    death = np.array([params.q(n) / phi(n) for n in range(N)])
    birth[N - 1] = 0.0  # reflect at the truncation edge
    # (I - Q^T) mu = nu with Q tridiagonal
    A = np.zeros((N, N))
    for n in range(N):
        A[n, n] = 1.0 + birth[n] + (death[n] if n >= 1 else 0.0)
        if n >= 1:
            A[n - 1, n] = -death[n]       # Q^T[n-1,n] = Q[n,n-1]
        if n + 1 < N:
            A[n + 1, n] = -birth[n]       # Q^T[n+1,n] = Q[n,n+1]
    mu = np.linalg.solve(A, nu_vec)
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    # dominated by nu in CDF (guaranteed analytically for monotone phi)
    cmu = np.maximum(np.cumsum(mu), np.cumsum(nu_vec))
    mu = np.diff(cmu, prepend=0.0)
    mu /= mu.sum()
    return mu


# ---------------------------------------------------------------------------
# Exact simulation
# ---------------------------------------------------------------------------

@dataclass
class BDTrajectory:
    """One chain path: initial state, (time, new state) events, end time."""

    initial_state: int
    times: np.ndarray
    states: np.ndarray
    t_end: float

    def state_at(self, t: float) -> int:
        if t < 0 or t > self.t_end:
            raise ValueError("time outside trajectory")
        i = int(np.searchsorted(self.times, t, side="right"))
        return int(self.states[i - 1]) if i > 0 else self.initial_state


def _uniformized_blocks(params: BDParams, pool: StreamPool, key: int,
                        start_block: int, x0: int, t0: float, t_target: float):
    """Extend a uniformized path strictly past t_target.

    Returns (times, states, next_block); dummy down-proposals at 0 are kept
    as repeated states (harmless for lookups, compressed on export).
    Homogeneous parameters use the vectorized reflected-walk recursion;
    tables fall back to a sequential loop.
    """
    times_parts, states_parts = [], []
    block = start_block
    t, x = t0, x0
    while t <= t_target:
        span = t_target - t
        n = max(int(span + 4.0 * math.sqrt(span + 1.0) + 16), 32)
        holds, coins = pool.uniform_pair_block(key, block, n)
        block += 1
        tt, ss = _materialize(params, holds, coins, t, x)
        times_parts.append(tt)
        states_parts.append(ss)
        t = float(tt[-1])
        x = int(ss[-1])
    if len(times_parts) == 1:
        return times_parts[0], states_parts[0], block
    return np.concatenate(times_parts), np.concatenate(states_parts), block


def _materialize(params: BDParams, holds: np.ndarray, coins: np.ndarray,
                 t0: float, x0: int):
    """Event times and states from hold/coin draws, starting at (t0, x0)."""
    tt = t0 + np.cumsum(holds)
    if params.homogeneous:
        W = np.cumsum(np.where(coins < params.tail, np.int64(1), np.int64(-1)))
        ss = np.maximum(x0 + W, W - np.minimum.accumulate(W))
    else:
        p_arr = params.p_array(4096)
        p_tail = params.tail
        ss = np.empty(len(coins), dtype=np.int64)
        xi = x0
        for i in range(len(coins)):
            pr = p_arr[xi] if xi < len(p_arr) else p_tail
            if coins[i] < pr:
                xi += 1
            elif xi > 0:
                xi -= 1
            ss[i] = xi
    return tt, ss


def transient_tv_from_zero(params: BDParams, t: float,
                           n_states: int = 80) -> float:
    """TV distance between the chain law at time t from state 0 and its
    stationary law, computed by the uniformization series (float-exact).

    Both laws carry < 1e-20 mass above the truncation for the tabled
    parameter ranges, so the result is limited by float accumulation
    (~1e-15), not the truncation.
    """
    nu = stationary_distribution(params, mass_tol=1e-18)
    nu_vec = np.zeros(n_states, dtype=np.longdouble)
    k = min(n_states, len(nu.weights))
    nu_vec[:k] = nu.weights[:k]
    p = np.array([params.p(i) for i in range(n_states)], dtype=np.longdouble)
    q = 1.0 - p
    v = np.zeros(n_states, dtype=np.longdouble)
    v[0] = 1.0
    acc = np.zeros(n_states, dtype=np.longdouble)
    k_max = int(t + 12.0 * math.sqrt(t + 1.0) + 25)
    # Poisson(t) weights multiplicatively in extended precision: the
    # accumulation floor stays below every stated tolerance
    t_ld = np.longdouble(t)
    w = np.exp(-t_ld)
    for kk in range(k_max + 1):
        if kk > 0:
            w = w * t_ld / kk
            # one uniformized step: up w.p. p, down w.p. q (stay at 0)
            up = v * p
            down = v * q
            v = np.zeros(n_states, dtype=np.longdouble)
            v[1:] += up[:-1]
            v[0] += down[0]
            v[:-1] += down[1:]
            v[-1] += up[-1]  # reflect at the truncation edge
        if w > 0.0:
            acc += w * v
    return float(0.5 * np.abs(acc - nu_vec).sum())


def relaxation_cutoff(params: BDParams, tol: float = 1e-14) -> float | None:
    """Smallest grid time where the zero-start transient law is within tol
    of stationarity in TV; None if the grid never gets there.
    """
    for t in (200.0, 400.0, 800.0, 1600.0):
        if transient_tv_from_zero(params, t) < tol:
            return t
    return None


def poisson_endpoint_state(params: BDParams, gen, x0: int, t: float) -> int:
    """State at time t without materializing hold times.

    The uniformized tick count on [0, t] is Poisson(t); given the count,
    the state is the coin reduction alone, so the endpoint draw is exact.
    Consumes draws from `gen` (an already-positioned generator).
    """
    n = int(gen.poisson(t))
    if n == 0:
        return x0
    coins = gen.random(n)
    if params.homogeneous:
        W = np.cumsum(np.where(coins < params.tail, np.int64(1), np.int64(-1)))
        return int(max(x0 + int(W[-1]), int(W[-1]) - int(W.min())))
    p_arr = params.p_array(4096)
    x = x0
    for i in range(n):
        pr = p_arr[x] if x < len(p_arr) else params.tail
        if coins[i] < pr:
            x += 1
        elif x > 0:
            x -= 1
    return int(x)


def simulate_bdp(params: BDParams, init_state: int, t_end: float,
                 seed: int, *, pool: StreamPool | None = None,
                 key: int | None = None) -> BDTrajectory:
    """Exact path on [0, t_end] from init_state, deterministic in the seed."""
    if t_end < 0:
        raise ValueError("t_end >= 0")
    if pool is None:
        pool = StreamPool()
    if key is None:
        key = stream_key(seed, TAG_SITE, (0,))
    if t_end == 0.0:
        return BDTrajectory(init_state, np.zeros(0), np.zeros(0, dtype=np.int64), 0.0)
    times, states, _ = _uniformized_blocks(params, pool, key, 0, init_state,
                                           0.0, t_end)
    keep = times <= t_end
    times, states = times[keep], states[keep]
    # compress dummy repeats so consecutive states differ by exactly 1
    prev = np.concatenate([[init_state], states[:-1]])
    real = states != prev
    return BDTrajectory(init_state, times[real], states[real], t_end)


def sample_stationary(params: BDParams, rng) -> int:
    """One stationary draw by inverse CDF, analytic geometric tail past the table."""
    dist = stationary_distribution(params)
    return sample_dist(dist, float(rng.random()))


def sample_dist(dist: DistTable, u: float) -> int:
    """Inverse-CDF draw; the truncated tail is resolved analytically."""
    w = dist.weights
    acc = 0.0
    for n in range(len(w)):
        acc += w[n]
        if u < acc:
            return n
    r = dist.tail_ratio
    if dist.tail_mass <= 0.0 or r <= 0.0:
        return len(w) - 1
    # residual mass splits geometrically: w_L = tail_mass*(1-r), L = len(w)
    rem = u - acc
    w_next = dist.tail_mass * (1.0 - r)
    j = 0
    while rem >= w_next and w_next > 0.0:
        rem -= w_next
        w_next *= r
        j += 1
    return len(w) + j
