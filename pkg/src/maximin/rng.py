"""Deterministic, splittable random number streams.

Every stochastic routine in this package receives an :class:`RngStream`
instead of a bare seed.  A stream is identified by the pair
``(seed, stream_id)`` and is backed by the counter-based Philox generator,
so the same pair produces the same sample sequence on every platform and
independently of execution order.  Substreams are derived by hashing
integer keys into the stream id, which makes parallel work (replication
``r``, draw ``m``, ...) reproducible regardless of worker scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    """One round of the SplitMix64 mixer (64-bit integer hash)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _mix(state: int, value: int) -> int:
    return _splitmix64((state ^ (value & _MASK64)) & _MASK64)


@dataclass(frozen=True)
class RngStream:
    """A value-type handle for one reproducible random stream.

    Parameters
    ----------
    seed : int
        Base seed of the whole experiment (64-bit).
    stream_id : int
        Identifier of this particular stream (64-bit).  Distinct ids give
        statistically independent Philox streams.
    """

    seed: int = 0
    stream_id: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK64)

    def child(self, *keys: int) -> "RngStream":
        """Derive a substream by hashing integer keys into the stream id."""
        sid = self.stream_id
        for k in keys:
            sid = _mix(sid, int(k))
        return RngStream(self.seed, sid)

    def generator(self) -> np.random.Generator:
        """Fresh Philox generator positioned at the start of the stream."""
        key = (self.seed << 64) | self.stream_id
        return np.random.Generator(np.random.Philox(key=key))
