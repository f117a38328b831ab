"""Synthetic stream generation.

Arrivals follow a Poisson process per stream (or an exact uniform spacing
for buffer-bound experiments); join-attribute values come from a recursive
biased-split generator: at each of `depth` levels the lower half of the
current key range draws the next descent with probability `bias`, yielding
the classic 80/20-style self-similar skew (bias=0.8, one level puts 80% of
the mass in the hot half; bias=0.5 is uniform).

Both streams use independent generators seeded apart from each other.
"""

from __future__ import annotations

import heapq
import random
import struct
from dataclasses import dataclass

from .core import TUPLE_BYTES, Tuple, decode_tuple, encode_tuple
from .errors import ConfigError

_ARRIVAL = struct.Struct("<Q")


@dataclass
class WorkloadConfig:
    rate_tps: float
    bias: float
    depth: int
    key_domain: int
    seed: int
    process: str = "poisson"

    def __post_init__(self):
        if not (0.5 <= self.bias < 1):
            raise ConfigError("bias must lie in [0.5, 1)")
        if self.rate_tps < 0:
            raise ConfigError("rate must be non-negative")


def next_interarrival(rate_tps: float, rng: random.Random) -> float | None:
    """Exponential gap in seconds with mean 1/rate; None when the stream is silent."""
    if rate_tps <= 0:
        return None
    return rng.expovariate(rate_tps)


def next_key(bias: float, depth: int, key_domain: int, rng: random.Random) -> int:
    """Descend `depth` biased binary splits, then draw uniformly in the leaf range."""
    lo, hi = 0, key_domain
    for _ in range(depth):
        if hi - lo <= 1:
            break
        mid = (lo + hi) // 2
        if rng.random() < bias:
            hi = mid  # the low half is the hot half
        else:
            lo = mid
    return rng.randint(lo, max(lo, hi - 1))


class StreamSource:
    """Single-stream arrival iterator: (arrival_ns, stream_id, key, serial)."""

    def __init__(self, stream_id: int, cfg: WorkloadConfig):
        self.stream_id = stream_id
        self.cfg = cfg
        self._gap_rng = random.Random(f"{cfg.seed}:gaps:{stream_id}")
        self._key_rng = random.Random(f"{cfg.seed}:keys:{stream_id}")
        self._clock_s = 0.0
        self._serial = 0

    def __iter__(self):
        return self

    def __next__(self):
        if self.cfg.process == "uniform":
            if self.cfg.rate_tps <= 0:
                raise StopIteration
            self._clock_s += 1.0 / self.cfg.rate_tps
        else:
            gap = next_interarrival(self.cfg.rate_tps, self._gap_rng)
            if gap is None:
                raise StopIteration
            self._clock_s += gap
        key = next_key(self.cfg.bias, self.cfg.depth, self.cfg.key_domain, self._key_rng)
        serial = self._serial
        self._serial += 1
        return (int(self._clock_s * 1e9), self.stream_id, key, serial)


def merged_arrivals(sources):
    """Merge per-stream iterators by (arrival_ns, stream_id, serial)."""
    return heapq.merge(*sources)


def arrivals_for(cfg1: WorkloadConfig, cfg2: WorkloadConfig):
    return merged_arrivals([StreamSource(0, cfg1), StreamSource(1, cfg2)])


# -- trace dump / replay --------------------------------------------------------

def dump_trace(path, arrivals) -> int:
    """8-byte virtual arrival time + 64-byte tuple record each; returns count."""
    n = 0
    with open(path, "wb") as fh:
        for arrival_ns, stream_id, key, serial in arrivals:
            fh.write(_ARRIVAL.pack(arrival_ns))
            fh.write(encode_tuple(arrival_to_tuple(arrival_ns, stream_id, key, serial)))
            n += 1
    return n


def replay_trace(path):
    rec = _ARRIVAL.size + TUPLE_BYTES
    with open(path, "rb") as fh:
        while True:
            buf = fh.read(rec)
            if not buf:
                return
            (arrival_ns,) = _ARRIVAL.unpack_from(buf, 0)
            t = decode_tuple(buf, _ARRIVAL.size)
            yield (arrival_ns, t.stream_id, t.join_key, t.serial)


def arrival_to_tuple(arrival_ns: int, stream_id: int, key: int, serial: int) -> Tuple:
    return Tuple(stream_id, arrival_ns // 10**6, key, serial)
