"""Brute-force sliding-window join reference.

Deliberately independent of the engine: consumes the raw timestamped
arrival trace and enumerates qualifying pairs per key with a double loop.
A pair qualifies when the older tuple is still inside its own stream's
(closed) window at the newer tuple's arrival.
"""

from __future__ import annotations


def sliding_join_reference(arrivals, w1_ms: int, w2_ms: int) -> set[tuple[int, int]]:
    """arrivals: iterable of (stream_id, ts_ms, key, serial) -> {(serial1, serial2)}."""
    side1: dict[int, list[tuple[int, int]]] = {}
    side2: dict[int, list[tuple[int, int]]] = {}
    for stream_id, ts, key, serial in arrivals:
        (side1 if stream_id == 0 else side2).setdefault(key, []).append((ts, serial))
    pairs = set()
    for key, lst1 in side1.items():
        lst2 = side2.get(key)
        if not lst2:
            continue
        for ts1, id1 in lst1:
            for ts2, id2 in lst2:
                if ts1 >= ts2:
                    ok = ts1 - ts2 <= w2_ms
                else:
                    ok = ts2 - ts1 <= w1_ms
                if ok:
                    pairs.add((id1, id2))
    return pairs
