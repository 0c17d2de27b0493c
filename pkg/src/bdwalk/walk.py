"""Particle dynamics over a lattice environment.

Two exact constructions of the same walk law:

* thinning: each site carries a rate-1 mark process with an attached
  uniform; a mark at time r is accepted with probability phi(state(r)).
* time change: per jump, an independent Exp(1) level is inverted through
  the integrated rate, which is piecewise linear between environment
  events.  Requires a strictly positive rate function.

Jump destinations come from a dedicated stream indexed by jump count, so
runs that share a master seed share the embedded chain across
constructions and rate functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bdp import RateFunction
from .rng import (
    StreamPool,
    TAG_CLOCK,
    TAG_MARKS,
    TAG_XI,
    stream_key,
)


class Stalled(RuntimeError):
    """No accepted mark within the configured simulated-time budget."""


class ZeroRateTail(ValueError):
    """The time-change construction needs a strictly positive rate."""


class SeedMismatch(ValueError):
    """Path and environment do not come from the same realization."""


class JumpDistribution:
    """Finite-support step law on Z^d minus the origin."""

    def __init__(self, vectors, probs):
        self.vectors = np.asarray(vectors, dtype=np.int64)
        if self.vectors.ndim == 1:
            self.vectors = self.vectors[:, None]
        self.probs = np.asarray(probs, dtype=float)
        if len(self.vectors) != len(self.probs):
            raise ValueError("vectors and probs must align")
        if abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1")
        if np.any(self.probs < 0):
            raise ValueError("negative probability")
        if np.any(np.all(self.vectors == 0, axis=1)):
            raise ValueError("zero vector in support")
        self.d = self.vectors.shape[1]
        self.cum = np.cumsum(self.probs)
        self.mean = self.probs @ self.vectors
        centered = self.vectors - self.mean
        self.cov = (centered * self.probs[:, None]).T @ centered
        self.support_radius = int(np.abs(self.vectors).max())

    @property
    def mean_zero(self) -> bool:
        return bool(np.all(np.abs(self.mean) <= 1e-12))

    @property
    def symmetric(self) -> bool:
        table = {tuple(v): p for v, p in zip(self.vectors, self.probs)}
        return all(abs(table.get(tuple(-np.asarray(v)), 0.0) - p) <= 1e-12
                   for v, p in table.items())

    def sample_steps(self, uniforms: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.cum, uniforms, side="right")
        idx = np.minimum(idx, len(self.probs) - 1)
        return self.vectors[idx]

    def to_json_value(self):
        return [{"dx": [int(c) for c in v], "p": float(p)}
                for v, p in zip(self.vectors, self.probs)]

    @staticmethod
    def from_json_value(v) -> "JumpDistribution":
        return JumpDistribution([e["dx"] for e in v], [e["p"] for e in v])


def symmetric_pm1() -> JumpDistribution:
    return JumpDistribution([[1], [-1]], [0.5, 0.5])


def drifted_pm1(p_up: float = 0.7) -> JumpDistribution:
    return JumpDistribution([[1], [-1]], [p_up, 1.0 - p_up])


@dataclass
class WalkPath:
    """Jump times, embedded positions, and construction metadata."""

    taus: np.ndarray                 # shape (n+1,), taus[0] = 0
    positions: np.ndarray            # shape (n+1, d)
    construction: str
    seed: int
    fingerprint: tuple
    clock_marks: np.ndarray | None = None   # Exp(1) levels (time change)
    first_gaps: np.ndarray | None = None    # gap to first mark (thinning)
    t_end: float | None = None              # set for time-stopped runs
    windows: dict | None = None             # jump index -> box states

    @property
    def n_jumps(self) -> int:
        return len(self.taus) - 1

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    def jump_count(self, t: float) -> int:
        """N_t = max{n : tau_n <= t}; right-continuous and nondecreasing."""
        if t < 0:
            raise ValueError("t >= 0")
        return int(np.searchsorted(self.taus, t, side="right")) - 1

    def position_at(self, t: float) -> np.ndarray:
        return self.positions[self.jump_count(t)]


class MarkField:
    """Per-site rate-1 proposal marks with attached acceptance uniforms.

    A fixed realization: reading a site's marks twice, or from two coupled
    walks, yields the same points.
    """

    def __init__(self, seed: int, pool: StreamPool, walk_tag: int = 0):
        self.seed = seed
        self.pool = pool
        self.walk_tag = walk_tag
        self.sites: dict = {}

    def site(self, coords: tuple) -> "MarkSite":
        m = self.sites.get(coords)
        if m is None:
            key = stream_key(self.seed, TAG_MARKS, (self.walk_tag, *coords))
            m = MarkSite(self.pool, key)
            self.sites[coords] = m
        return m


class MarkSite:
    __slots__ = ("pool", "key", "block", "times", "uniforms", "n", "t_end")

    def __init__(self, pool: StreamPool, key: int):
        self.pool = pool
        self.key = key
        self.block = 0
        self.times = None
        self.uniforms = None
        self.n = 0
        self.t_end = 0.0

    def ensure(self, t: float):
        while self.t_end <= t:
            k = max(int(t - self.t_end) + 16, 32)
            holds, us = self.pool.uniform_pair_block(self.key, self.block, k)
            self.block += 1
            tt = self.t_end + np.cumsum(holds)
            if self.n:
                self.times = np.concatenate([self.times[: self.n], tt])
                self.uniforms = np.concatenate([self.uniforms[: self.n], us])
            else:
                self.times, self.uniforms = tt, us
            self.n = len(self.times)
            self.t_end = float(self.times[-1])


class _StepFeed:
    """Embedded-chain steps, one per jump count, from the xi stream."""

    def __init__(self, pi: JumpDistribution, seed: int, pool: StreamPool,
                 xi_tag: int = 0):
        self.pi = pi
        self.key = stream_key(seed, TAG_XI, (xi_tag,))
        self.pool = pool
        self.block = 0
        self._steps = None
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._steps is None or self._pos >= len(self._steps):
            us = self.pool.uniforms(self.key, self.block, 256)
            self.block += 1
            self._steps = self.pi.sample_steps(us)
            self._pos = 0
        v = self._steps[self._pos]
        self._pos += 1
        return v


def embedded_chain(seed: int, pool: StreamPool, pi: JumpDistribution,
                   n_jumps: int, xi_tag: int = 0) -> np.ndarray:
    """Positions x_0..x_n from the jump-destination stream, x_0 = origin.

    Identical to what any walk with the same master seed realizes, so
    coupled walks can share it explicitly.
    """
    feed = _StepFeed(pi, seed, pool, xi_tag)
    out = np.zeros((n_jumps + 1, pi.d), dtype=np.int64)
    for k in range(1, n_jumps + 1):
        out[k] = out[k - 1] + feed.next()
    return out


def _parse_stop(stop) -> tuple:
    if "n_jumps" in stop:
        return int(stop["n_jumps"]), None
    if "t_end" in stop:
        return None, float(stop["t_end"])
    raise ValueError("stop must give n_jumps or t_end")


def simulate_thinning(env, phi: RateFunction, pi: JumpDistribution | None, stop,
                      *, marks: MarkField | None = None, t_start: float = 0.0,
                      embedded: np.ndarray | None = None,
                      embedded_offset: int = 0, xi_tag: int = 0,
                      on_jump=None, stall_time: float = 1e6) -> WalkPath:
    """Construction by thinning of per-site rate-1 marks.

    With `embedded` the walk follows a precomputed position sequence from
    `embedded_offset` (shared-destination couplings); otherwise
    destinations come from the jump-count-indexed stream.  `on_jump(n,
    site, tau)` fires after each committed jump, before the move.
    """
    n_target, t_target = _parse_stop(stop)
    pool = env.pool
    if marks is None:
        marks = MarkField(env.seed, pool)
    phi_arr = phi.lookup_array()
    cap = len(phi_arr) - 1
    if embedded is None:
        steps = _StepFeed(pi, env.seed, pool, xi_tag)
        pos = tuple([0] * env.d)
    else:
        steps = None
        pos = tuple(int(v) for v in embedded[embedded_offset])
    t = t_start
    taus = [t_start]
    positions = [pos]
    gaps = []
    chains: dict = {}
    mark_sites: dict = {}
    while True:
        if n_target is not None and len(taus) > n_target:
            break
        if t_target is not None and t > t_target:
            break
        site = chains.get(pos)
        if site is None:
            site = chains[pos] = env.site(pos)
        site.touch(t)
        msite = mark_sites.get(pos)
        if msite is None:
            msite = mark_sites[pos] = marks.site(pos)
        msite.ensure(t)
        mi = int(msite.times[: msite.n].searchsorted(t, side="right"))
        first_gap = None
        accepted = None
        while True:
            if mi >= msite.n:
                msite.ensure(msite.t_end + 16.0)
            r = float(msite.times[mi])
            if first_gap is None:
                first_gap = r - t
            if r - t > stall_time:
                raise Stalled(f"no accepted mark within {stall_time} at {pos}")
            site.ensure(r)
            state = site.state_before(r)
            if msite.uniforms[mi] < phi_arr[state if state < cap else cap]:
                accepted = r
                break
            mi += 1
        if t_target is not None and accepted > t_target:
            t = accepted
            break
        t = accepted
        gaps.append(first_gap)
        if on_jump is not None:
            on_jump(len(taus), pos, t)
        if steps is not None:
            step = steps.next()
            pos = tuple(int(a + b) for a, b in zip(pos, step))
        else:
            pos = tuple(int(v) for v in embedded[embedded_offset + len(taus)])
        taus.append(t)
        positions.append(pos)
    return WalkPath(
        taus=np.array(taus),
        positions=np.array(positions, dtype=np.int64),
        construction="thinning",
        seed=env.seed,
        fingerprint=env.fingerprint,
        first_gaps=np.array(gaps),
        t_end=t_target,
    )


def simulate_timechange(env, phi: RateFunction, pi: JumpDistribution, stop,
                        *, record_windows=None, xi_tag: int = 0) -> WalkPath:
    """Construction by exact inversion of the integrated rate.

    record_windows, when given, is (radius, sorted jump indices); the
    returned path then carries `windows`: {n: tuple of states on the box
    around the pre-jump position at time tau_n}.
    """
    if not phi.strictly_positive:
        raise ZeroRateTail("rate tail is zero; use the thinning construction")
    n_target, t_target = _parse_stop(stop)
    pool = env.pool
    phi_list = phi.lookup_array().tolist()
    cap = len(phi_list) - 1
    identity_rate = phi.inf_value == 1.0  # clock equals time: skip the field
    clock_key = stream_key(env.seed, TAG_CLOCK, (xi_tag,))
    clock_block = 0
    levels = pool.exponentials(clock_key, clock_block, 256).tolist()
    level_pos = 0
    d = env.d
    # embedded chain precomputed in chunks; walks sharing the seed share it
    xi_key = stream_key(env.seed, TAG_XI, (xi_tag,))
    xi_block = 0

    def more_positions(prev_rows):
        nonlocal xi_block
        us = pool.uniforms(xi_key, xi_block, 256)
        xi_block += 1
        steps = pi.sample_steps(us)
        base = prev_rows[-1] if prev_rows is not None else np.zeros(
            (1, pi.d), dtype=np.int64)
        chunk = base + np.cumsum(steps, axis=0)
        return chunk

    emb = np.zeros((1, d), dtype=np.int64)
    pos_keys = [0] if d == 1 else [tuple(emb[0])]
    t = 0.0
    taus = [0.0]
    used_levels = []
    win_radius, win_at = (None, ()) if record_windows is None else record_windows
    win_set = set(win_at)
    windows = {}
    chains: dict = {}
    env_site = env.site
    n_done = 0
    while True:
        if n_target is not None and n_done >= n_target:
            break
        if t_target is not None and t > t_target:
            break
        if n_done + 1 >= len(emb):
            emb = np.vstack([emb, more_positions(emb)])
            if d == 1:
                pos_keys = emb[:, 0].tolist()
            else:
                pos_keys = [tuple(row) for row in emb.tolist()]
        if level_pos >= len(levels):
            clock_block += 1
            levels = pool.exponentials(clock_key, clock_block, 256).tolist()
            level_pos = 0
        target = levels[level_pos]
        level_pos += 1
        if identity_rate:
            t = t + target
        else:
            key = pos_keys[n_done]
            site = chains.get(key)
            if site is None:
                site = chains[key] = env_site(key)
                if site.anchor is None:
                    site.touch(t)
            if site.t_end <= t + target:
                site.ensure(t + target + 1.0)
            times = site.times
            states = site.states
            n_ev = site.n
            j = int(times[: n_ev].searchsorted(t, side="right"))
            cur = t
            acc = 0.0
            span = 8.0
            state = int(states[j - 1]) if j > 0 else site.anchor_state
            titem = times.item
            sitem = states.item
            while True:
                if j >= n_ev:
                    site.ensure(site.t_end + span)
                    span *= 2.0  # state-dependent horizon unknown: grow it
                    times, states, n_ev = site.times, site.states, site.n
                    titem, sitem = times.item, states.item
                t_next = titem(j)
                f = phi_list[state if state < cap else cap]
                a = (t_next - cur) * f
                if acc + a >= target:
                    t = cur + (target - acc) / f
                    break
                acc += a
                cur = t_next
                state = sitem(j)
                j += 1
        if t_target is not None and t > t_target:
            break
        used_levels.append(target)
        n_done += 1
        if n_done in win_set:
            windows[n_done] = _window_states(
                env, tuple(int(v) for v in emb[n_done - 1]), t, win_radius)
        taus.append(t)
    path = WalkPath(
        taus=np.array(taus),
        positions=emb[: n_done + 1].copy(),
        construction="timechange",
        seed=env.seed,
        fingerprint=env.fingerprint,
        clock_marks=np.array(used_levels),
        t_end=t_target,
    )
    if record_windows is not None:
        path.windows = windows
    return path


def _window_states(env, center: tuple, t: float, radius: int) -> tuple:
    """States on the sup-norm box around `center` at time t, row-major order."""
    d = len(center)
    offsets = _box_offsets(d, radius)
    out = []
    for off in offsets:
        c = tuple(center[i] + off[i] for i in range(d))
        s = env.site(c)
        s.touch(t)
        s.ensure(t)
        out.append(s.state_before(t))
    return tuple(out)


def _box_offsets(d: int, radius: int) -> list:
    rng = range(-radius, radius + 1)
    if d == 1:
        return [(i,) for i in rng]
    if d == 2:
        return [(i, j) for i in rng for j in rng]
    return [(i, j, k) for i in rng for j in rng for k in rng]


def window_states_at(env, path: WalkPath, n: int, radius: int) -> tuple:
    """Environment seen right before jump n: box around the pre-jump position."""
    if n < 1 or n > path.n_jumps:
        raise ValueError("jump index outside the path")
    center = tuple(int(v) for v in path.positions[n - 1])
    return _window_states(env, center, float(path.taus[n]), radius)


def clock_increments(path: WalkPath, env, phi: RateFunction) -> np.ndarray:
    """Integrated rate over each inter-jump interval along the path.

    Exact piecewise-linear integrals of phi(state) on the occupied site's
    timeline; for a correct simulation these are iid Exp(1).
    """
    if path.fingerprint != env.fingerprint:
        raise SeedMismatch("path was generated against a different environment")
    phi_arr = phi.lookup_array()
    cap = len(phi_arr) - 1
    out = np.empty(path.n_jumps)
    for n in range(path.n_jumps):
        a, b = float(path.taus[n]), float(path.taus[n + 1])
        site = env.site(tuple(int(v) for v in path.positions[n]))
        site.ensure(b)
        times = site.times[: site.n]
        states = site.states[: site.n]
        lo = int(times.searchsorted(a, side="right"))
        hi = int(times.searchsorted(b, side="right"))
        knots = np.concatenate([[a], times[lo:hi], [b]])
        vals = np.concatenate([
            [site.init_state if lo == 0 else states[lo - 1]], states[lo:hi]])
        vals = np.minimum(vals, cap)
        out[n] = float(np.dot(np.diff(knots), phi_arr[vals]))
    return out


def jump_count(path: WalkPath, t: float) -> int:
    return path.jump_count(t)


def cut_times(positions: np.ndarray, horizon: int,
              buffer: int | None = None) -> dict:
    """Indices n <= horizon-buffer whose past and future ranges are disjoint.

    Certified only against the observed horizon: a site visited first at
    f and last at l blocks every n in [f, l).  Linear-time coverage scan.
    The default buffer keeps a tenth of the horizon as guard.
    """
    positions = np.asarray(positions)
    if positions.ndim == 1:
        positions = positions[:, None]
    N = len(positions) - 1
    if horizon > N:
        raise ValueError("horizon beyond the path")
    if buffer is None:
        buffer = horizon // 10
    if buffer < 0 or buffer > horizon:
        raise ValueError("need horizon >= buffer >= 0")
    cover = np.zeros(horizon + 2, dtype=np.int64)
    first_seen: dict = {}
    last_seen: dict = {}
    for i in range(horizon + 1):
        key = tuple(positions[i])
        if key not in first_seen:
            first_seen[key] = i
        last_seen[key] = i
    for key, f in first_seen.items():
        l = last_seen[key]
        if l > f:
            cover[f] += 1
            cover[l] -= 1
    blocked = np.cumsum(cover[: horizon + 1])
    idx = [n for n in range(horizon - buffer + 1) if blocked[n] == 0]
    return {"indices": idx, "certified_to": horizon,
            "flag": "horizon-certified only"}


def backward_walk(positions: np.ndarray, n: int) -> np.ndarray:
    """Reversed increments around jump n: z_l = x_{n-1-l} - x_{n-1}, l = 0..n-1."""
    positions = np.asarray(positions)
    if positions.ndim == 1:
        positions = positions[:, None]
    if n < 1 or n - 1 >= len(positions):
        raise ValueError("need 1 <= n <= path length")
    ref = positions[n - 1]
    return positions[n - 1:: -1] - ref
