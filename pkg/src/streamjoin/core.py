"""Domain primitives shared by every node.

Stream tuples, sliding-window membership, the two deterministic hash
functions (group partitioning and bucket hashing), and the fixed 64-byte
wire codec. Everything here is a pure value or a pure function, so the
types can be shared freely across node instances.
"""

from __future__ import annotations

import struct
from typing import NamedTuple

S1 = 0
S2 = 1
STREAMS = (S1, S2)

KEY_MAX = 10_000_000
TUPLE_BYTES = 64

# 64-byte record: stream_id u8 | timestamp u64 LE | join_key u32 LE | payload 51B.
# The first 8 payload bytes carry the per-stream arrival serial; the rest is zero
# padding. Serial-in-payload gives every tuple a stable identity even when
# millisecond timestamps collide.
_HEADER = struct.Struct("<BQI")
_SERIAL = struct.Struct("<Q")
_PAD = b"\x00" * (TUPLE_BYTES - _HEADER.size - _SERIAL.size)

# Multiplicative (Fibonacci) hashing; the second multiplier decorrelates the
# bucket hash from group assignment.
_MUL_GROUP = 0x9E3779B97F4A7C15
_MUL_BUCKET = 0xC2B2AE3D27D4EB4F
_MASK64 = (1 << 64) - 1

BUCKET_HASH_BITS = 32


class Tuple(NamedTuple):
    stream_id: int
    timestamp: int  # master-clock ticks (ms)
    join_key: int
    serial: int     # per-stream arrival index


class WindowSpec(NamedTuple):
    w1: int  # ms
    w2: int  # ms

    def window_for(self, stream_id: int) -> int:
        return self.w1 if stream_id == S1 else self.w2


def opposite(stream_id: int) -> int:
    return S2 if stream_id == S1 else S1


def encode_tuple(t: Tuple) -> bytes:
    if not (0 <= t.join_key <= KEY_MAX):
        raise ValueError(f"join_key {t.join_key} outside [0, {KEY_MAX}]")
    return _HEADER.pack(t.stream_id, t.timestamp, t.join_key) + _SERIAL.pack(t.serial) + _PAD


def decode_tuple(buf: bytes, offset: int = 0) -> Tuple:
    stream_id, ts, key = _HEADER.unpack_from(buf, offset)
    (serial,) = _SERIAL.unpack_from(buf, offset + _HEADER.size)
    return Tuple(stream_id, ts, key, serial)


def hash_partition(join_key: int, n_part: int) -> int:
    """Map a join key to its partition-group, identically on every node."""
    if n_part <= 0:
        raise ValueError("n_part must be positive")
    return (((join_key * _MUL_GROUP) & _MASK64) >> 32) % n_part


def bucket_hash(join_key: int) -> int:
    """32-bit secondary hash used by the extendible directories."""
    return ((join_key * _MUL_BUCKET) & _MASK64) >> 32


def window_membership(t_now: int, tup: Tuple, spec: WindowSpec) -> bool:
    """True iff the tuple sits inside its stream's window at time t_now.

    The window is closed at both ends: a tuple exactly w ticks old is still
    a member.
    """
    w = spec.window_for(tup.stream_id)
    return t_now - w <= tup.timestamp <= t_now


def pair_within_windows(ts1: int, ts2: int, spec: WindowSpec) -> bool:
    """Join predicate for a candidate (stream-1, stream-2) tuple pair.

    Evaluated at the arrival of the newer constituent: the older tuple must
    still be inside its own stream's window at that instant. Symmetric in
    the sense that whichever tuple is probed later yields the same verdict,
    which is what makes batch processing order irrelevant to the output set.
    """
    if ts1 >= ts2:
        return ts1 - ts2 <= spec.w2
    return ts2 - ts1 <= spec.w1
