"""Lattice field of independent birth-and-death chains, lazily materialized.

Each site owns a stream keyed by (master seed, site coordinates), so its
trajectory from time 0 is a fixed function of the master seed no matter
when, or whether, other sites are touched.  Site paths are stored as
growing (event time, state) arrays; dummy hold events at 0 are kept
(they cost nothing and keep lookups branch-free).

Coupled chains ride on top of a realized base chain: they evolve with
their own randomness while strictly on one side of the base, coalesce on
first equality, and copy the base afterwards.  This one primitive
implements coalescing environment pairs, dominated restarts, and the
dominating environment with stationary refreshes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bdp import BDParams, DistTable, relaxation_cutoff, sample_dist, \
    stationary_distribution, _materialize, _uniformized_blocks

_RELAX_CACHE: dict = {}


def _relax_time(params: BDParams) -> float | None:
    key = (params.table, params.tail)
    if key not in _RELAX_CACHE:
        _RELAX_CACHE[key] = relaxation_cutoff(params)
    return _RELAX_CACHE[key]
from .rng import StreamPool, TAG_COUPLED, TAG_SITE, key_extend, key_prefix, \
    stream_key

_INIT_BLOCK = (1 << 61) + 1  # far outside the path block range


class UnsupportedDimension(ValueError):
    pass


class NonMonotoneQuery(ValueError):
    pass


class NotYet:
    """Sentinel: coalescence not observed within the horizon."""

    def __repr__(self):
        return "NotYet"


NOT_YET = NotYet()


@dataclass(frozen=True)
class InitDistSpec:
    """Initial law used at every site: all-zero, stationary, or a table.

    Table specs must come with constants (c, beta) certifying an
    exponentially decaying tail, checked on the table itself.
    """

    kind: str                 # "zero" | "stationary" | "table"
    table: tuple = ()
    c: float = 0.0
    beta: float = 0.0

    @staticmethod
    def zero() -> "InitDistSpec":
        return InitDistSpec(kind="zero")

    @staticmethod
    def stationary() -> "InitDistSpec":
        return InitDistSpec(kind="stationary")

    @staticmethod
    def product_table(weights, c: float, beta: float) -> "InitDistSpec":
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be a probability vector")
        if beta <= 0:
            raise ValueError("beta must be positive")
        tail = 1.0 - np.cumsum(w) + w  # mass at [n, inf)
        for n in range(len(w)):
            if tail[n] > c * math.exp(-beta * n) + 1e-12:
                raise ValueError(f"tail mass at {n} violates c*exp(-beta*n)")
        return InitDistSpec(kind="table", table=tuple(w), c=c, beta=beta)

    def cdf_table(self, params: BDParams) -> DistTable:
        if self.kind == "zero":
            return DistTable(weights=np.array([1.0]), tail_mass=0.0)
        if self.kind == "stationary":
            return stationary_distribution(params)
        return DistTable(weights=np.array(self.table), tail_mass=0.0, tol=1e-9)

    def draw(self, params: BDParams, dist_cache: dict, u: float) -> int:
        if self.kind == "zero":
            return 0
        key = ("init", self.kind)
        if key not in dist_cache:
            dist_cache[key] = self.cdf_table(params)
        return sample_dist(dist_cache[key], u)

    def dominated_by_stationary(self, params: BDParams) -> bool:
        """CDF(init) >= CDF(stationary) pointwise on the init's support."""
        if self.kind == "zero":
            return True
        if self.kind == "stationary":
            return True
        nu = stationary_distribution(params)
        mine = np.cumsum(self.table)
        k = min(len(mine), len(nu.weights))
        return bool(np.all(mine[:k] >= nu.cdf()[:k] - 1e-12))

    def to_json_value(self):
        if self.kind == "zero":
            return "zero"
        if self.kind == "stationary":
            return "stationary"
        return {"table": list(self.table), "c": self.c, "beta": self.beta}

    @staticmethod
    def from_json_value(v) -> "InitDistSpec":
        if v == "zero":
            return InitDistSpec.zero()
        if v == "stationary":
            return InitDistSpec.stationary()
        return InitDistSpec.product_table(v["table"], v.get("c", 1.0), v["beta"])


class SiteChain:
    """One site's chain: lazy exact path, per-site stream.

    Full mode materializes events from time 0.  Anchored mode resolves the
    state at the first touch time by an exact Poisson tick-count draw and
    only materializes events from there on; the pre-anchor history is then
    unreadable, which the mass pipelines never need.
    """

    __slots__ = ("params", "pool", "key", "block", "init_state",
                 "times", "states", "n", "t_end", "anchor", "anchor_state",
                 "_init_draw")

    def __init__(self, params: BDParams, pool: StreamPool, key: int,
                 init_state: int | None, anchored: bool = False,
                 init_draw=None):
        self.params = params
        self.pool = pool
        self.key = key
        self.block = 0 if not anchored else 1  # block 0: anchor-phase draws
        self.init_state = init_state if init_state is not None else 0
        self.times = None
        self.states = None
        self.n = 0
        self.anchor = None if anchored else 0.0
        self.anchor_state = self.init_state
        self._init_draw = init_draw
        self.t_end = 0.0

    def touch(self, t: float):
        """Anchored mode: fix the first observation time and draw its state.

        One positioned-generator session: the anchor state comes from the
        environment's anchor draw (Poisson tick-count reduction, or a
        direct stationary draw when stationarity makes it exact), followed
        by a first forward event window.
        """
        if self.anchor is None:
            fwd = 24
            g = self.pool._seek(self.key, 0)
            x_init, a_state = self._init_draw(g, t)
            self.init_state = x_init
            self.anchor = t if t > 0.0 else 0.0
            self.anchor_state = a_state
            holds = g.standard_exponential(fwd)
            coins = g.random(fwd)
            self.times, self.states = _materialize(self.params, holds, coins,
                                                   self.anchor, a_state)
            self.n = fwd
            self.t_end = float(self.times[-1])

    def ensure(self, t: float):
        """Materialize the path strictly past time t."""
        if self.anchor is None:
            self.touch(t)
        if self.t_end > t:
            return
        x0 = int(self.states[self.n - 1]) if self.n else self.anchor_state
        tt, ss, nxt = _uniformized_blocks(self.params, self.pool, self.key,
                                          self.block, x0, self.t_end, t)
        self.block = nxt
        if self.n:
            self.times = np.concatenate([self.times[: self.n], tt])
            self.states = np.concatenate([self.states[: self.n], ss])
        else:
            self.times, self.states = tt, ss
        self.n = len(self.times)
        self.t_end = float(self.times[-1])

    def state_before(self, t: float) -> int:
        """State at time t (the path is right-continuous; t <= ensured horizon)."""
        if self.anchor is not None and t < self.anchor:
            raise NonMonotoneQuery("query before the site's first observation")
        if self.n == 0:
            return self.anchor_state
        i = int(self.times[: self.n].searchsorted(t, side="right"))
        return int(self.states[i - 1]) if i else self.anchor_state


class LatticeEnvironment:
    """Field of independent site chains over Z^d, addressed by coordinate tuple."""

    def __init__(self, d: int, params: BDParams, init: InitDistSpec, seed: int,
                 pool: StreamPool | None = None, layer: int = 0,
                 anchored: bool = False):
        if d not in (1, 2, 3):
            raise UnsupportedDimension(f"d={d}")
        self.d = d
        self.params = params
        self.init = init
        self.seed = seed
        self.layer = layer
        self.anchored = anchored
        self.pool = pool if pool is not None else StreamPool()
        self.sites: dict = {}
        self._dist_cache: dict = {}
        self._clock: dict = {}
        self._key_base = key_prefix(seed, TAG_SITE, (layer,))
        self._relax = False  # resolved lazily via _relax_time

    @property
    def fingerprint(self) -> tuple:
        return (self.seed, self.layer, self.d, self.params.table,
                self.params.tail, self.init.kind, self.anchored)

    def _coords(self, site) -> tuple:
        c = (site,) if isinstance(site, int) else tuple(int(v) for v in site)
        if len(c) != self.d:
            raise UnsupportedDimension(f"site {c} in d={self.d}")
        return c

    def site(self, site) -> SiteChain:
        c = self._coords(site)
        s = self.sites.get(c)
        if s is None:
            key = key_extend(self._key_base, c)
            if self.anchored:
                s = SiteChain(self.params, self.pool, key, None,
                              anchored=True, init_draw=self._anchor_draw)
            else:
                u = float(self.pool.uniforms(key, _INIT_BLOCK, 1)[0])
                x0 = self.init.draw(self.params, self._dist_cache, u)
                s = SiteChain(self.params, self.pool, key, x0)
            self.sites[c] = s
        return s

    def _nu_table(self) -> DistTable:
        if "nu" not in self._dist_cache:
            self._dist_cache["nu"] = stationary_distribution(self.params)
        return self._dist_cache["nu"]

    def _anchor_draw(self, g, t: float) -> tuple:
        """(initial state, state at the anchor time t), one generator session.

        A stationary start is stationary at any t; a zero start beyond the
        computed relaxation cutoff is stationary to below double
        resolution.  Everything else runs the Poisson tick-count
        reduction.
        """
        params = self.params
        if t <= 0.0:
            x = self.init.draw(params, self._dist_cache, float(g.random()))
            return x, x
        kind = self.init.kind
        if kind == "stationary":
            x = sample_dist(self._nu_table(), float(g.random()))
            return x, x
        if kind == "zero":
            if self._relax is False:
                self._relax = _relax_time(params)
            if self._relax is not None and t >= self._relax:
                return 0, sample_dist(self._nu_table(), float(g.random()))
        n = int(g.poisson(t))
        us = g.random(n + 1)
        x0 = self.init.draw(params, self._dist_cache, float(us[0]))
        if n == 0:
            return x0, x0
        coins = us[1:]
        if params.homogeneous:
            W = np.cumsum(np.where(coins < params.tail, np.int64(1),
                                   np.int64(-1)))
            state = max(x0 + int(W[-1]), int(W[-1]) - int(W.min()))
        else:
            _, ss = _materialize(params, np.empty(n), coins, 0.0, x0)
            state = int(ss[-1])
        return x0, state

    def init_uniform(self, site) -> float:
        """The uniform that seeded (or would seed) this site's initial draw."""
        c = self._coords(site)
        key = key_extend(self._key_base, c)
        return float(self.pool.uniforms(key, _INIT_BLOCK, 1)[0])

    def state_at(self, site, t: float) -> int:
        """Public query; per-site query times must not decrease."""
        c = self._coords(site)
        if t < 0:
            raise ValueError("t >= 0")
        last = self._clock.get(c, 0.0)
        if t < last:
            raise NonMonotoneQuery(f"site {c}: {t} < {last}")
        self._clock[c] = t
        s = self.site(c)
        s.touch(t)
        if t > 0.0:
            s.ensure(t)
        return s.state_before(t)


class CoupledSiteChain:
    """Chain on one side of a realized base chain, coalescing on contact.

    Free phase: own rate-1 ticks with the usual up/down coins, scanning
    base events in merged time order; equality at any event coalesces the
    pair, after which base events are copied verbatim.  `refresh` replaces
    the state (dominating mode) and re-opens the free phase.

    The side order (above/below) is an exact construction property;
    `violations` counts any observed breach and is expected to stay 0.
    """

    __slots__ = ("base", "side", "params", "pool", "key", "block",
                 "times", "states", "n", "t_start", "t_end", "value",
                 "init_state", "anchor", "anchor_state", "coalesced_at",
                 "pending", "base_ptr", "horizon", "violations", "_holds",
                 "_coins", "_buf_pos")

    def __init__(self, base: SiteChain, side: int, params: BDParams,
                 pool: StreamPool, key: int, init_value: int,
                 t_start: float = 0.0):
        self.base = base
        self.side = side  # +1: stays >= base; -1: stays <= base
        self.params = params
        self.pool = pool
        self.key = key
        self.block = 0
        self.times = np.empty(64)
        self.states = np.empty(64, dtype=np.int64)
        self.n = 0
        self.t_start = t_start
        self.t_end = t_start
        self.value = init_value
        self.init_state = init_value
        self.anchor = t_start       # interface parity with SiteChain
        self.anchor_state = init_value
        self.coalesced_at = None
        self.pending = None
        base.ensure(t_start)
        self.base_ptr = int(base.times[: base.n].searchsorted(t_start, "right")) \
            if base.n else 0
        self.horizon = t_start
        self.violations = 0
        self._holds = None
        self._coins = None
        self._buf_pos = 0
        base_v = base.state_before(t_start)
        self._check(init_value, base_v)
        if init_value == base_v:
            self.coalesced_at = t_start

    def touch(self, t: float):
        """Coupled chains are never anchored; present for interface parity."""

    def _check(self, mine: int, theirs: int):
        if self.side * (mine - theirs) < 0:
            self.violations += 1

    def _append(self, t: float, v: int):
        if self.n == len(self.times):
            self.times = np.concatenate([self.times, np.empty(len(self.times))])
            self.states = np.concatenate(
                [self.states, np.empty(len(self.states), dtype=np.int64)])
        self.times[self.n] = t
        self.states[self.n] = v
        self.n += 1
        self.t_end = t

    def _next_tick(self):
        if self._holds is None or self._buf_pos >= len(self._holds):
            self._holds, self._coins = self.pool.uniform_pair_block(
                self.key, self.block, 64)
            self.block += 1
            self._buf_pos = 0
        h = float(self._holds[self._buf_pos])
        c = float(self._coins[self._buf_pos])
        self._buf_pos += 1
        return h, c

    def _copy_base(self, T: float):
        self.base.ensure(T)
        bt, bs, bn = self.base.times, self.base.states, self.base.n
        i = self.base_ptr
        while i < bn and bt[i] <= T:
            self._append(float(bt[i]), int(bs[i]))
            i += 1
        self.base_ptr = i
        if self.n:
            self.value = int(self.states[self.n - 1])
        self.horizon = max(self.horizon, T)

    def ensure(self, T: float):
        if self.coalesced_at is not None:
            self._copy_base(T)
            return
        while True:
            if self.pending is None:
                h, c = self._next_tick()
                self.pending = (self.t_end + h, c)
            tick_t, coin = self.pending
            limit = tick_t if tick_t <= T else T
            self.base.ensure(limit)
            bt, bs, bn = self.base.times, self.base.states, self.base.n
            while self.base_ptr < bn and bt[self.base_ptr] <= limit:
                tb = float(bt[self.base_ptr])
                vb = int(bs[self.base_ptr])
                self.base_ptr += 1
                if vb == self.value:
                    self.coalesced_at = tb
                    self.pending = None
                    self._append(tb, vb)
                    self._copy_base(max(T, tb))
                    return
                self._check(self.value, vb)
            if tick_t > T:
                self.horizon = max(self.horizon, T)
                return
            # the own tick fires
            self.pending = None
            v = self.value
            if coin < self.params.p(v):
                nv = v + 1
            elif v > 0:
                nv = v - 1
            else:
                nv = v
            self._append(tick_t, nv)
            self.value = nv
            self.base.ensure(tick_t)
            vb = self.base.state_before(tick_t)
            if nv == vb:
                self.coalesced_at = tick_t
                self._copy_base(max(T, tick_t))
                return
            self._check(nv, vb)

    def refresh(self, T: float, new_value: int):
        """Replace the state at time T and resume the free phase above/below.

        Landing exactly on the base's current value coalesces on the spot;
        leaving the pair detached-but-equal would let them cross unseen.
        """
        if T < self.t_end:
            # drop materialized future; it influenced nothing observed yet
            self.n = int(self.times[: self.n].searchsorted(T, side="right"))
            self.t_end = float(self.times[self.n - 1]) if self.n else self.t_start
        self.base.ensure(T)
        self.base_ptr = int(self.base.times[: self.base.n].searchsorted(T, "right"))
        self.pending = None
        self._append(T, new_value)
        self.value = new_value
        self.horizon = T
        base_v = self.base.state_before(T)
        self.coalesced_at = T if new_value == base_v else None
        self._check(new_value, base_v)

    def state_before(self, t: float) -> int:
        if t < self.t_start:
            raise ValueError("query before chain start")
        if self.n == 0:
            return self.init_state
        i = int(self.times[: self.n].searchsorted(t, side="right"))
        return int(self.states[i - 1]) if i else self.init_state


class CoupledEnvironment:
    """Two environments sharing per-site randomness for their initial draws.

    The lower marginal is a plain LatticeEnvironment; each upper site is a
    CoupledSiteChain on the chosen side of its lower twin.  Initial draws
    use one shared uniform per site (quantile coupling), so when the two
    initial laws are CDF-ordered the pathwise order holds from time 0.
    """

    def __init__(self, d: int, params: BDParams, init_lower: InitDistSpec,
                 init_upper: InitDistSpec, seed: int, side: int = +1,
                 layer: int = 1):
        self.d = d
        self.params = params
        self.seed = seed
        self.side = side
        self.layer = layer
        self.lower = LatticeEnvironment(d, params, init_lower, seed)
        self.init_upper = init_upper
        self.pool = self.lower.pool
        self.upper_sites: dict = {}
        self._dist_cache: dict = {}
        self._clock: dict = {}

    def upper_site(self, site) -> CoupledSiteChain:
        c = self.lower._coords(site)
        s = self.upper_sites.get(c)
        if s is None:
            base = self.lower.site(c)
            u = self.lower.init_uniform(c)
            x0 = self.init_upper.draw(self.params, self._dist_cache, u)
            key = stream_key(self.seed, TAG_COUPLED, (self.layer, *c))
            s = CoupledSiteChain(base, self.side, self.params, self.pool,
                                 key, x0, t_start=0.0)
            self.upper_sites[c] = s
        return s

    def lower_state_at(self, site, t: float) -> int:
        return self.lower.state_at(site, t)

    def upper_state_at(self, site, t: float) -> int:
        c = self.lower._coords(site)
        last = self._clock.get(c, 0.0)
        if t < last:
            raise NonMonotoneQuery(f"site {c}: {t} < {last}")
        self._clock[c] = t
        s = self.upper_site(c)
        s.ensure(t)
        return s.state_before(t)

    def coalescence_time(self, site, horizon: float):
        """First meeting time at the site, or NOT_YET past the horizon."""
        if horizon < 0:
            raise ValueError("horizon >= 0")
        s = self.upper_site(site)
        if s.coalesced_at is None:
            s.ensure(horizon)
        if s.coalesced_at is None or s.coalesced_at > horizon:
            return NOT_YET
        return s.coalesced_at

    def order_violations(self) -> int:
        return sum(s.violations for s in self.upper_sites.values())


class UpperView:
    """Walk-facing view of the coupled (upper) marginal of a pair."""

    def __init__(self, coupled: CoupledEnvironment):
        self._c = coupled
        self.d = coupled.d
        self.params = coupled.params
        self.seed = coupled.seed
        self.pool = coupled.pool

    @property
    def fingerprint(self) -> tuple:
        return (*self._c.lower.fingerprint, "upper", self._c.layer)

    def site(self, coords):
        return self._c.upper_site(coords)


class RestartField:
    """All-zero environment opened at a restart time, held below the base.

    Each site chain starts at `t_start` from state 0 and stays pathwise
    under the base environment's chain at that site.
    """

    def __init__(self, base_env: LatticeEnvironment, t_start: float,
                 restart_id: int):
        self._base = base_env
        self.t_start = t_start
        self.restart_id = restart_id
        self.d = base_env.d
        self.params = base_env.params
        self.seed = base_env.seed
        self.pool = base_env.pool
        self.sites: dict = {}

    @property
    def fingerprint(self) -> tuple:
        return (*self._base.fingerprint, "restart", self.restart_id)

    def site(self, coords):
        c = self._base._coords(coords)
        s = self.sites.get(c)
        if s is None:
            key = stream_key(self.seed, TAG_COUPLED,
                             (1000 + self.restart_id, *c))
            s = CoupledSiteChain(self._base.site(c), -1, self.params,
                                 self.pool, key, 0, t_start=self.t_start)
            self.sites[c] = s
        return s

    def order_violations(self) -> int:
        return sum(s.violations for s in self.sites.values())


def coalescing_pair(d: int, params: BDParams, init_a: InitDistSpec,
                    init_b: InitDistSpec, seed: int) -> CoupledEnvironment:
    """Two coalescing environment versions; A is the base, B rides above it.

    When init_a is CDF-dominated by init_b the pair is also monotone
    (a <= b pathwise); with equal inits the chains coincide from time 0.
    """
    return CoupledEnvironment(d, params, init_a, init_b, seed, side=+1)
