"""Extendible-hash directory that fine-tunes partition-group sizes.

A partition-group starts as a single bucket. When the group outgrows the
tuning threshold the directory splits it into mini-partitions so that the
per-probe scan cost stays bounded: every bucket is kept within
[theta, 2*theta] blocks whenever the hash allows it.

Layout convention: the directory indexes the top `global_depth` bits of the
32-bit bucket hash, so a bucket with local depth `ld` owns one contiguous,
aligned run of 2^(global_depth - ld) entries. The buddy of a bucket is the
adjacent sibling run, per the first-entry formula in `buddy_entry`. Under
this layout doubling and halving the directory preserve run contiguity.

Buckets hold the tuples of BOTH stream windows for their key sub-range;
split/merge thresholds apply to the combined size in blocks.
"""

from __future__ import annotations

import numpy as np

from .core import S1, S2, STREAMS, Tuple, bucket_hash
from .errors import ProtocolError

BLOCK_BYTES_DEFAULT = 4096


class Block:
    """Fixed-capacity run of same-stream tuples in non-decreasing ts order.

    `fresh` counts the newest tuples (a suffix) that have not yet served as
    the probing side of a join pass.
    """

    __slots__ = ("keys", "ts", "serials", "fresh", "_arrays")

    def __init__(self):
        self.keys: list[int] = []
        self.ts: list[int] = []
        self.serials: list[int] = []
        self.fresh = 0
        self._arrays = None

    def __len__(self):
        return len(self.keys)

    def append(self, tup: Tuple):
        self.keys.append(tup.join_key)
        self.ts.append(tup.timestamp)
        self.serials.append(tup.serial)
        self.fresh += 1
        self._arrays = None

    @property
    def newest_ts(self) -> int:
        return self.ts[-1]

    def arrays(self):
        """(keys, ts, serials) as int64 arrays, cached once the block is stable."""
        if self._arrays is None:
            self._arrays = (
                np.asarray(self.keys, dtype=np.int64),
                np.asarray(self.ts, dtype=np.int64),
                np.asarray(self.serials, dtype=np.int64),
            )
        return self._arrays

    def iter_tuples(self, stream_id: int):
        for k, t, s in zip(self.keys, self.ts, self.serials):
            yield Tuple(stream_id, t, k, s)


class MiniPartition:
    """One extendible-hashing bucket: two block lists, one per stream window."""

    __slots__ = ("local_depth", "first_entry", "blocks", "split_refused")

    def __init__(self, local_depth: int, first_entry: int):
        self.local_depth = local_depth
        self.first_entry = first_entry
        self.blocks: tuple[list[Block], list[Block]] = ([], [])
        self.split_refused = False

    @property
    def total_blocks(self) -> int:
        return len(self.blocks[S1]) + len(self.blocks[S2])

    def tuple_count(self) -> int:
        return sum(len(b) for side in self.blocks for b in side)

    def head(self, stream_id: int, block_tuples: int) -> Block:
        side = self.blocks[stream_id]
        if not side or len(side[-1]) >= block_tuples:
            side.append(Block())
        return side[-1]

    def stream_tuples(self, stream_id: int):
        for b in self.blocks[stream_id]:
            yield from b.iter_tuples(stream_id)


def buddy_entry(first_entry: int, global_depth: int, local_depth: int) -> int:
    """First directory entry of a bucket's merge partner."""
    span = 1 << (global_depth - local_depth)
    if first_entry % (span << 1) == 0:
        return first_entry + span
    return first_entry - span


def rebuild_blocks(tuples_in_order, block_tuples: int) -> list[Block]:
    """Pack an already temporally ordered tuple sequence into full blocks."""
    blocks: list[Block] = []
    cur = None
    for tup in tuples_in_order:
        if cur is None or len(cur) >= block_tuples:
            cur = Block()
            blocks.append(cur)
        cur.append(tup)
    for b in blocks:
        b.fresh = 0
    return blocks


class ExtendibleDirectory:
    """Directory of mini-partitions for one partition-group."""

    def __init__(self, theta_blocks: int, block_tuples: int, d_max: int = 12):
        self.theta_blocks = theta_blocks
        self.block_tuples = block_tuples
        self.d_max = d_max
        self.global_depth = 0
        root = MiniPartition(0, 0)
        self.entries: list[MiniPartition] = [root]
        self.refused_splits = 0

    # -- addressing ---------------------------------------------------------

    def entry_for_key(self, join_key: int) -> int:
        if self.global_depth == 0:
            return 0
        return bucket_hash(join_key) >> (32 - self.global_depth)

    def bucket_for_key(self, join_key: int) -> MiniPartition:
        return self.entries[self.entry_for_key(join_key)]

    def buckets(self) -> list[MiniPartition]:
        """Distinct buckets in first-entry order."""
        out = []
        i = 0
        while i < len(self.entries):
            b = self.entries[i]
            out.append(b)
            i += 1 << (self.global_depth - b.local_depth)
        return out

    # -- restructuring ------------------------------------------------------

    def _double(self):
        if self.global_depth >= self.d_max:
            raise ProtocolError("directory doubling beyond d_max")
        self.entries = [b for b in self.entries for _ in (0, 1)]
        self.global_depth += 1
        for b in self.buckets():
            b.first_entry <<= 1

    def split_bucket(self, bucket: MiniPartition) -> bool:
        """Split one oversized bucket; False when refused at d_max."""
        if bucket.local_depth == self.global_depth:
            if self.global_depth >= self.d_max:
                if not bucket.split_refused:
                    bucket.split_refused = True
                    self.refused_splits += 1
                return False
            self._double()
        ld = bucket.local_depth
        span = 1 << (self.global_depth - ld)
        half = span >> 1
        lo = MiniPartition(ld + 1, bucket.first_entry)
        hi = MiniPartition(ld + 1, bucket.first_entry + half)
        for stream_id in STREAMS:
            lo_side, hi_side = [], []
            for tup in bucket.stream_tuples(stream_id):
                if self.entry_for_key(tup.join_key) < hi.first_entry:
                    lo_side.append(tup)
                else:
                    hi_side.append(tup)
            lo.blocks[stream_id][:] = rebuild_blocks(lo_side, self.block_tuples)
            hi.blocks[stream_id][:] = rebuild_blocks(hi_side, self.block_tuples)
        for e in range(bucket.first_entry, bucket.first_entry + half):
            self.entries[e] = lo
        for e in range(hi.first_entry, hi.first_entry + half):
            self.entries[e] = hi
        return True

    def _try_halve(self):
        while self.global_depth > 0 and all(
            b.local_depth < self.global_depth for b in self.buckets()
        ):
            self.entries = self.entries[::2]
            self.global_depth -= 1
            for b in self.buckets():
                b.first_entry >>= 1

    def merge_buddy(self, bucket: MiniPartition) -> bool:
        """Merge an underfull bucket with its buddy when eligible; no-op otherwise."""
        if bucket.local_depth == 0:
            return False
        bud_first = buddy_entry(bucket.first_entry, self.global_depth, bucket.local_depth)
        buddy = self.entries[bud_first]
        if buddy.first_entry != bud_first or buddy.local_depth != bucket.local_depth:
            return False
        if bucket.total_blocks + buddy.total_blocks >= 2 * self.theta_blocks:
            return False
        lo, hi = (bucket, buddy) if bucket.first_entry < buddy.first_entry else (buddy, bucket)
        merged = MiniPartition(bucket.local_depth - 1, lo.first_entry)
        for stream_id in STREAMS:
            combined = sorted(
                list(lo.stream_tuples(stream_id)) + list(hi.stream_tuples(stream_id)),
                key=lambda t: (t.timestamp, t.serial),
            )
            merged.blocks[stream_id][:] = rebuild_blocks(combined, self.block_tuples)
        span = 1 << (self.global_depth - merged.local_depth)
        for e in range(merged.first_entry, merged.first_entry + span):
            self.entries[e] = merged
        self._try_halve()
        return True

    def tune(self) -> int:
        """Split/merge until every bucket fits [theta, 2*theta] or is flagged.

        Returns the number of tuples moved between buckets (restructuring
        work, charged to the owner's processing time by the caller).
        """
        moved = 0
        progress = True
        while progress:
            progress = False
            for b in self.buckets():
                if b.total_blocks > 2 * self.theta_blocks and not b.split_refused:
                    n = b.tuple_count()
                    if self.split_bucket(b):
                        moved += n
                        progress = True
                        break
            else:
                for b in self.buckets():
                    if b.total_blocks < self.theta_blocks and b.local_depth > 0:
                        n = b.tuple_count()
                        if self.merge_buddy(b):
                            moved += n
                            progress = True
                            break
        return moved

    # -- validation ---------------------------------------------------------

    def check_invariants(self):
        assert len(self.entries) == 1 << self.global_depth
        total = 0
        i = 0
        while i < len(self.entries):
            b = self.entries[i]
            assert b.local_depth <= self.global_depth
            span = 1 << (self.global_depth - b.local_depth)
            assert b.first_entry == i and i % span == 0
            for j in range(span):
                assert self.entries[i + j] is b
            for side in b.blocks:
                last = None
                for blk in side:
                    assert len(blk) <= self.block_tuples
                    for t in blk.ts:
                        assert last is None or t >= last
                        last = t
            total += span
            i += span
        assert total == len(self.entries)
