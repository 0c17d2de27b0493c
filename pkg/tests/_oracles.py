"""Independent oracles shared by the test modules.

Everything here is deliberately naive (partial sums, dense linear solves,
dynamic programming, brute-force enumeration) and never imports the
simulation kernels it is used to check.
"""

import math

import numpy as np
from scipy.stats import chi2


def geometric_partial_sum(ratio, first_term, n_terms=10_000):
    """sum of first_term * ratio^k, k = 0..n_terms-1, by explicit loop."""
    total = 0.0
    term = first_term
    for _ in range(n_terms):
        total += term
        term *= ratio
    return total


def ergodic_sum_partial(p_of, q_of, N=10_000):
    """Partial sum of prod_{i=1..n} p_{i-1}/q_i up to n = N."""
    total = 0.0
    u = 1.0
    for n in range(1, N + 1):
        u *= p_of(n - 1) / q_of(n)
        total += u
    return total


def strong_sum_partial(p_of, q_of, N=300, tail_n=700):
    """Partial sum of S_n^2/R_n with S_n itself a partial sum."""
    rho = [0.0] + [p_of(n) / q_of(n) for n in range(1, tail_n + 1)]
    R = [1.0]
    for n in range(1, tail_n + 1):
        R.append(R[-1] * rho[n])
    suffix = [0.0] * (tail_n + 2)
    for n in range(tail_n, 0, -1):
        suffix[n] = suffix[n + 1] + R[n]
    total = 0.0
    for n in range(1, N + 1):
        total += suffix[n] ** 2 / R[n]
    return total


def embedded_chain_hitting_times(p_of, start, target, runs, rng):
    """Step counts of the +-1 embedded chain from start until hitting target."""
    out = np.empty(runs)
    for r in range(runs):
        x = start
        steps = 0
        while x != target:
            if x == 0:
                x = 1
            elif rng.random() < p_of(x):
                x += 1
            else:
                x -= 1
            steps += 1
        out[r] = steps
    return out


def product_chain_mean_meeting_time(p, start_a, start_b, cap=60):
    """Expected meeting time of two independent uniformized chains.

    Dense linear solve on the truncated product space {0..cap}^2 with the
    diagonal absorbing.  Each chain proposes at rate 1; a proposal moves up
    with probability p, down with probability 1-p (no-op at 0).
    """
    q = 1.0 - p
    n = cap + 1
    idx = {}
    states = []
    for a in range(n):
        for b in range(n):
            if a != b:
                idx[(a, b)] = len(states)
                states.append((a, b))
    A = np.zeros((len(states), len(states)))
    rhs = np.ones(len(states))
    for (a, b), i in idx.items():
        # total proposal rate 2; effective moves may be no-ops at 0
        A[i, i] = 2.0
        for (na, nb, rate) in (
            (min(a + 1, cap), b, p),
            (max(a - 1, 0) if a > 0 else 0, b, q if a > 0 else 0.0),
            (a, min(b + 1, cap), p),
            (a, max(b - 1, 0) if b > 0 else 0, q if b > 0 else 0.0),
        ):
            if rate == 0.0:
                continue
            if na == a and nb == b:
                A[i, i] -= rate
            elif na == nb:
                pass  # absorbed: contributes nothing to the unknowns
            else:
                A[i, idx[(na, nb)]] -= rate
        # no-op proposals at state 0 keep the chain in place
        if a == 0:
            A[i, i] -= q
        if b == 0:
            A[i, i] -= q
    h = np.linalg.solve(A, rhs)
    return h[idx[(start_a, start_b)]]


def srw_no_ascent_probability(m):
    """P(simple +-1 walk stays <= 0 for m steps), by dynamic programming."""
    # states: 0..-m mapped to indices 0..m
    prob = np.zeros(m + 2)
    prob[0] = 1.0
    for _ in range(m):
        nxt = np.zeros_like(prob)
        nxt[1:] += 0.5 * prob[:-1]    # step down
        nxt[:-1] += 0.5 * prob[1:]    # step up from strictly negative levels
        prob = nxt                    # up from level 0 exits and is dropped
    return prob.sum()


def chi_square_gof(counts, probs, alpha=0.01, min_expected=5.0):
    """Plain chi-square GOF with tail pooling; returns (stat, crit, pass)."""
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    n = counts.sum()
    exp = probs * n
    # pool from the right until every expected count is large enough
    while len(exp) > 2 and exp[-1] < min_expected:
        exp[-2] += exp[-1]
        counts[-2] += counts[-1]
        exp, counts = exp[:-1], counts[:-1]
    stat = float(((counts - exp) ** 2 / exp).sum())
    crit = float(chi2.ppf(1.0 - alpha, len(exp) - 1))
    return stat, crit, stat <= crit


def batch_mean_std(values, n_batches=20):
    """Standard error of the mean estimated by batch means."""
    values = np.asarray(values)
    k = len(values) // n_batches
    means = values[: k * n_batches].reshape(n_batches, k).mean(axis=1)
    return means.mean(), means.std(ddof=1) / math.sqrt(n_batches)
