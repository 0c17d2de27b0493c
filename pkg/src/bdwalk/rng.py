"""Deterministic, splittable random streams for reproducible parallel Monte Carlo.

Every source of randomness in a run is a stream addressed by
(master seed, purpose tag, index tuple).  A stream produces its draws in
fixed-size blocks; block b of a stream is generated by a PCG64 generator
whose 128-bit state is a splitmix64 hash of (key, b).  Consequences:

* the draws of a stream depend only on its address, never on what other
  streams were consumed in between (per-site laziness stays sound);
* replicas and worker processes can be sharded arbitrarily;
* reruns with the same master seed are bit-identical.

Distinct blocks live at hash-random positions of the PCG64 orbit; the
chance that two block windows overlap is ~ (#blocks)^2 * blocklen / 2^128.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Generator, PCG64

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# Purpose tags.  Enumerated so tag collisions are impossible by construction.
TAG_SITE = 1        # environment chain at one lattice site
TAG_MARKS = 2       # Poisson proposal marks on one site's timeline
TAG_XI = 3          # jump destinations of a walk
TAG_CLOCK = 4       # Exp(1) marks of the time-change construction
TAG_REFRESH = 5     # dominating-refresh uniforms
TAG_AUDIT = 6       # audit-time grid for order checks
TAG_INIT = 7        # initial state draws not tied to a site chain
TAG_COUPLED = 8     # free-phase randomness of a coupled (upper/lower) chain
TAG_GENERIC = 9     # scratch streams for estimators and tests


def mix64(z: int) -> int:
    """One splitmix64 step: advance by the golden-ratio increment and scramble."""
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def stream_key(master: int, tag: int, index: tuple = ()) -> int:
    """64-bit stream key from (master seed, tag, index tuple of ints)."""
    k = mix64(master & _MASK64)
    k = mix64(k ^ (tag & _MASK64))
    for c in index:
        k = mix64(k ^ (int(c) & _MASK64))
    return k


def key_prefix(master: int, tag: int, index: tuple = ()) -> int:
    """Partial fold of stream_key; extend with key_extend for inner indices."""
    return stream_key(master, tag, index)


def key_extend(prefix: int, index: tuple) -> int:
    """Continue the stream_key fold from a cached prefix."""
    k = prefix
    for c in index:
        k = mix64(k ^ (int(c) & _MASK64))
    return k


def _block_state(key: int, block: int) -> int:
    """128-bit PCG64 state for one block of one stream."""
    hi = mix64(key ^ mix64(block & _MASK64))
    lo = mix64(hi ^ ((block >> 64) & _MASK64) ^ 0xD6E8FEB86659FD93)
    return (hi << 64) | lo


class StreamPool:
    """One reusable PCG64 whose state is reset per block.

    A pool is owned by a single run context (one replica, one worker);
    it is not thread-safe and never shared.
    """

    def __init__(self):
        self._bg = PCG64(0)
        self._gen = Generator(self._bg)
        self._state = self._bg.state

    def _seek(self, key: int, block: int) -> Generator:
        st = self._state
        st["state"]["state"] = _block_state(key, block)
        st["has_uint32"] = 0
        st["uinteger"] = 0
        self._bg.state = st
        return self._gen

    def uniforms(self, key: int, block: int, n: int) -> np.ndarray:
        return self._seek(key, block).random(n)

    def exponentials(self, key: int, block: int, n: int) -> np.ndarray:
        return self._seek(key, block).standard_exponential(n)

    def uniform_pair_block(self, key: int, block: int, n: int):
        """(exponential holds, uniform coin flips) for one chain block."""
        g = self._seek(key, block)
        return g.standard_exponential(n), g.random(n)


class BlockStream:
    """Sequential consumer view of one stream: draw k values, then k more, ...

    Used for the few stream consumers that take values one at a time
    (jump destinations, time-change marks, refresh uniforms).
    """

    __slots__ = ("pool", "key", "block", "_buf", "_pos", "_blocksize", "_kind")

    def __init__(self, pool: StreamPool, key: int, kind: str = "uniform",
                 blocksize: int = 256):
        self.pool = pool
        self.key = key
        self.block = 0
        self._buf = None
        self._pos = 0
        self._blocksize = blocksize
        self._kind = kind

    def _refill(self):
        if self._kind == "uniform":
            self._buf = self.pool.uniforms(self.key, self.block, self._blocksize)
        else:
            self._buf = self.pool.exponentials(self.key, self.block, self._blocksize)
        self.block += 1
        self._pos = 0

    def next(self) -> float:
        if self._buf is None or self._pos >= self._blocksize:
            self._refill()
        v = self._buf[self._pos]
        self._pos += 1
        return float(v)

    def take(self, n: int) -> np.ndarray:
        out = np.empty(n)
        for i in range(n):
            out[i] = self.next()
        return out


def split_stream(master: int, tag: int, index: tuple = ()) -> Generator:
    """Standalone numpy Generator for the addressed stream.

    Convenience for cold paths (estimators, tests).  Hot paths use
    StreamPool block access instead; this generator starts at the state of
    block 2^62 of the same stream, far outside the block range any
    sequential consumer reaches.
    """
    key = stream_key(master, tag, index)
    bg = PCG64(0)
    st = bg.state
    st["state"]["state"] = _block_state(key, 1 << 62)
    st["has_uint32"] = 0
    st["uinteger"] = 0
    bg.state = st
    return Generator(bg)
