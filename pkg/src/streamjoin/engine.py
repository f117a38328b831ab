"""Slave-local join processor.

Drains pending tuples into the head blocks of their mini-partitions and
runs block nested-loop join passes. A pass fires when a head block fills or
when the draining round ends, and probes the block's fresh suffix against
every opposite-stream block of the same bucket, skipping the opposite
head's own fresh tuples; those will probe later. Fresh tuples therefore
probe exactly once, which is what makes the emitted pair set duplicate-free
and complete.

Block expiry is driven by a caller-supplied horizon (the oldest timestamp
that may still reach this group), never by bare wall/virtual time, so block
removal can never race an in-flight tuple. The per-pair window predicate is
applied at every emission as well, so expiry granularity never produces
stale pairs.

Processing cost is charged in virtual nanoseconds through a meter; the
caller bounds each round with a budget, and whatever does not fit stays in
the pending buffers. That backlog is exactly the load signal the master
reorganizes on.
"""

from __future__ import annotations

import heapq
from collections import deque

import numpy as np

from .core import (
    S1,
    S2,
    STREAMS,
    TUPLE_BYTES,
    Tuple,
    WindowSpec,
    hash_partition,
    opposite,
)
from .errors import ProtocolError
from .extendible import ExtendibleDirectory, MiniPartition, rebuild_blocks
from .metrics import JoinResult
from .wire import StateTransfer


class Meter:
    """Accumulates charged processing time on top of a base virtual instant."""

    __slots__ = ("base_ns", "charged")

    def __init__(self, base_ns: int = 0):
        self.base_ns = base_ns
        self.charged = 0

    def now(self) -> int:
        return self.base_ns + self.charged

    def charge(self, ns: int):
        self.charged += ns


class PartitionGroup:
    """One hash bucket of the stream windows; the unit of inter-node movement."""

    __slots__ = ("group_id", "directory", "pending", "pending_bytes")

    def __init__(self, group_id: int, directory: ExtendibleDirectory):
        self.group_id = group_id
        self.directory = directory
        self.pending: tuple[deque, deque] = (deque(), deque())
        self.pending_bytes = 0

    def tuple_count(self) -> int:
        return sum(b.tuple_count() for b in self.directory.buckets())


class JoinEngine:
    def __init__(
        self,
        window: WindowSpec,
        n_part: int,
        block_tuples: int,
        theta_blocks: int,
        d_max: int = 12,
        tuning: bool = True,
        buffer_capacity: int = 1 << 20,
        map_cost_ns: int = 500,
        cmp_cost_ns: int = 100,
        tune_cost_ns: int = 100,
    ):
        self.window = window
        self.n_part = n_part
        self.block_tuples = block_tuples
        self.theta_blocks = theta_blocks
        self.d_max = d_max
        self.tuning = tuning
        self.buffer_capacity = buffer_capacity
        self.map_cost_ns = map_cost_ns
        self.cmp_cost_ns = cmp_cost_ns
        self.tune_cost_ns = tune_cost_ns  # bucket maintenance, per tuple moved
        self.groups: dict[int, PartitionGroup] = {}
        self.pending_bytes = 0
        self.occupancy_samples: list[tuple[int, float]] = []
        self.overload_faults = 0
        self.comparisons = 0

    # -- ownership ----------------------------------------------------------

    def adopt_group(self, group_id: int):
        if group_id in self.groups:
            raise ProtocolError(f"group {group_id} already owned")
        directory = ExtendibleDirectory(self.theta_blocks, self.block_tuples, self.d_max)
        self.groups[group_id] = PartitionGroup(group_id, directory)

    # -- per-epoch pipeline ---------------------------------------------------

    def ingest_batch(self, tuples, epoch_idx: int) -> float:
        """Append a distribution batch to the pending mini-buffers.

        Records the buffer occupancy sample for this epoch (after the
        append, before any processing). Overfull buffers raise a recorded
        overload fault instead of dropping tuples.
        """
        for tup in tuples:
            gid = hash_partition(tup.join_key, self.n_part)
            group = self.groups.get(gid)
            if group is None:
                raise ProtocolError(f"tuple for foreign group {gid}")
            group.pending[tup.stream_id].append(tup)
            group.pending_bytes += TUPLE_BYTES
            self.pending_bytes += TUPLE_BYTES
        fill = self.pending_bytes / self.buffer_capacity
        if fill > 1.0:
            self.overload_faults += 1
            fill = 1.0
        self.occupancy_samples.append((epoch_idx, fill))
        return fill

    def run_epoch(self, watermark_ms: int, base_ns: int, budget_ns: int):
        """Drain oldest-first, then expire and tune each group, within budget.

        watermark_ms is the master-side drain time of the batch just
        ingested: every tuple not yet seen by this engine has a timestamp at
        or above it. Draining follows global arrival order across groups so
        that under overload no group starves and the age of the backlog is
        what the emitted production delays show.
        """
        meter = Meter(base_ns)
        results: list[JoinResult] = []
        self._drain_all(meter, budget_ns, results)
        for gid in sorted(self.groups):
            group = self.groups[gid]
            self.expire_blocks(gid, self._expiry_horizon(group, watermark_ms), meter, results)
            if self.tuning:
                self.tune_partitions(gid, meter)
        return results, meter.charged

    def _map_tuple(self, group: PartitionGroup, tup: Tuple, meter: Meter, results: list):
        group.pending_bytes -= TUPLE_BYTES
        self.pending_bytes -= TUPLE_BYTES
        meter.charge(self.map_cost_ns)
        bucket = group.directory.bucket_for_key(tup.join_key)
        head = bucket.head(tup.stream_id, self.block_tuples)
        head.append(tup)
        if len(head) == self.block_tuples:
            self._join_pass(bucket, tup.stream_id, meter, results)

    def _finish_round(self, group: PartitionGroup, meter: Meter, results: list):
        # partially filled heads probe when the round ends
        for bucket in group.directory.buckets():
            for stream_id in STREAMS:
                side = bucket.blocks[stream_id]
                if side and side[-1].fresh:
                    self._join_pass(bucket, stream_id, meter, results)

    def _drain_all(self, meter: Meter, budget_ns: int, results: list):
        heap = []
        for gid in sorted(self.groups):
            group = self.groups[gid]
            for side in STREAMS:
                if group.pending[side]:
                    t = group.pending[side][0]
                    heap.append((t.timestamp, t.stream_id, t.serial, gid))
        heapq.heapify(heap)
        touched = set()
        while heap and meter.charged < budget_ns:
            _, stream_id, _, gid = heapq.heappop(heap)
            group = self.groups[gid]
            tup = group.pending[stream_id].popleft()
            self._map_tuple(group, tup, meter, results)
            touched.add(gid)
            if group.pending[stream_id]:
                nxt = group.pending[stream_id][0]
                heapq.heappush(heap, (nxt.timestamp, nxt.stream_id, nxt.serial, gid))
        for gid in sorted(touched):
            self._finish_round(self.groups[gid], meter, results)

    def process_pending(self, group_id: int, meter: Meter, budget_ns: int, results: list):
        """Drain one group's pending tuples in timestamp order and join them."""
        group = self.groups[group_id]
        p1, p2 = group.pending
        while p1 or p2:
            if meter.charged >= budget_ns:
                break
            if p1 and p2:
                a, b = p1[0], p2[0]
                src = p1 if (a.timestamp, a.stream_id, a.serial) <= (b.timestamp, b.stream_id, b.serial) else p2
            else:
                src = p1 if p1 else p2
            self._map_tuple(group, src.popleft(), meter, results)
        self._finish_round(group, meter, results)

    def _join_pass(self, bucket, stream_id: int, meter: Meter, results: list):
        head = bucket.blocks[stream_id][-1]
        fresh = head.fresh
        probe_keys = np.asarray(head.keys[-fresh:], dtype=np.int64)
        probe_ts = np.asarray(head.ts[-fresh:], dtype=np.int64)
        probe_serials = head.serials[-fresh:]
        w_probe = self.window.window_for(stream_id)
        opp = opposite(stream_id)
        w_opp = self.window.window_for(opp)
        for blk in bucket.blocks[opp]:
            established = len(blk) - blk.fresh  # skip the opposite head's fresh suffix
            if established == 0:
                continue
            meter.charge(self.cmp_cost_ns * fresh * established)
            self.comparisons += fresh * established
            bk, bt, _ = blk.arrays()
            bk = bk[:established]
            bt = bt[:established]
            dt = probe_ts[:, None] - bt[None, :]
            ok = (probe_keys[:, None] == bk[None, :]) & (
                ((dt >= 0) & (dt <= w_opp)) | ((dt < 0) & (-dt <= w_probe))
            )
            if not ok.any():
                continue
            emit = meter.now()
            rows, cols = np.nonzero(ok)
            for r, c in zip(rows.tolist(), cols.tolist()):
                key = int(probe_keys[r])
                if stream_id == S1:
                    results.append(JoinResult(key, int(probe_ts[r]), blk.ts[c], emit,
                                              probe_serials[r], blk.serials[c]))
                else:
                    results.append(JoinResult(key, blk.ts[c], int(probe_ts[r]), emit,
                                              blk.serials[c], probe_serials[r]))
        head.fresh = 0

    def _expiry_horizon(self, group: PartitionGroup, watermark_ms: int) -> int:
        # leftover pending holds the watermark back: those tuples still probe later
        h = watermark_ms
        for side in group.pending:
            if side:
                h = min(h, side[0].timestamp)
        return h

    def expire_blocks(self, group_id: int, horizon_ms: int, meter: Meter, results: list):
        """Drop blocks no tuple at or after the horizon can still pair with.

        Each removed block is first joined against the fresh tuples of the
        opposite head block, which keeps the output complete when expiry is
        invoked while fresh tuples are still waiting for their pass.
        """
        group = self.groups[group_id]
        for bucket in group.directory.buckets():
            for stream_id in STREAMS:
                side = bucket.blocks[stream_id]
                cut = horizon_ms - self.window.window_for(stream_id)
                while side and side[0].newest_ts < cut:
                    blk = side.pop(0)
                    meter.charge(self.tune_cost_ns)
                    self._expiry_join(bucket, blk, stream_id, meter, results)

    def _expiry_join(self, bucket, blk, stream_id: int, meter: Meter, results: list):
        opp = opposite(stream_id)
        opp_side = bucket.blocks[opp]
        if not opp_side or opp_side[-1].fresh == 0:
            return
        head = opp_side[-1]
        fresh = head.fresh
        meter.charge(self.cmp_cost_ns * fresh * len(blk))
        self.comparisons += fresh * len(blk)
        emit = meter.now()
        bk, bt, _ = blk.arrays()
        fk = np.asarray(head.keys[-fresh:], dtype=np.int64)
        ft = np.asarray(head.ts[-fresh:], dtype=np.int64)
        fs = head.serials[-fresh:]
        dt = ft[:, None] - bt[None, :]
        w_opp_of_fresh = self.window.window_for(stream_id)   # window of the block's stream
        w_of_fresh = self.window.window_for(opp)
        ok = (fk[:, None] == bk[None, :]) & (
            ((dt >= 0) & (dt <= w_opp_of_fresh)) | ((dt < 0) & (-dt <= w_of_fresh))
        )
        rows, cols = np.nonzero(ok)
        for r, c in zip(rows.tolist(), cols.tolist()):
            if stream_id == S1:
                results.append(JoinResult(blk.keys[c], blk.ts[c], int(ft[r]), emit,
                                          blk.serials[c], fs[r]))
            else:
                results.append(JoinResult(blk.keys[c], int(ft[r]), blk.ts[c], emit,
                                          fs[r], blk.serials[c]))

    def tune_partitions(self, group_id: int, meter: Meter | None = None) -> int:
        moved = self.groups[group_id].directory.tune()
        if meter is not None:
            meter.charge(self.tune_cost_ns * moved)
        return moved

    # -- load reporting -------------------------------------------------------

    def report_load(self) -> float:
        """Mean occupancy over the samples of this reorganization interval."""
        if not self.occupancy_samples:
            return 0.0
        f = sum(s for _, s in self.occupancy_samples) / len(self.occupancy_samples)
        self.occupancy_samples.clear()
        return f

    # -- state movement -------------------------------------------------------

    def extract_state(self, group_id: int) -> StateTransfer:
        group = self.groups.pop(group_id, None)
        if group is None:
            raise ProtocolError(f"extract of unknown group {group_id}")
        buckets = []
        for b in group.directory.buckets():
            tuples = list(b.stream_tuples(S1)) + list(b.stream_tuples(S2))
            buckets.append((b.local_depth, b.first_entry, tuples))
        pending = []
        p1, p2 = deque(group.pending[S1]), deque(group.pending[S2])
        while p1 or p2:
            if p1 and p2:
                a, b = p1[0], p2[0]
                src = p1 if (a.timestamp, a.stream_id, a.serial) <= (b.timestamp, b.stream_id, b.serial) else p2
            else:
                src = p1 if p1 else p2
            pending.append(src.popleft())
        self.pending_bytes -= group.pending_bytes
        return StateTransfer(group_id, group.directory.global_depth, buckets, pending)

    def install_state(self, st: StateTransfer):
        if st.group_id in self.groups:
            raise ProtocolError(f"group {st.group_id} already owned")
        directory = ExtendibleDirectory(self.theta_blocks, self.block_tuples, self.d_max)
        directory.global_depth = st.global_depth
        directory.entries = [None] * (1 << st.global_depth)
        for local_depth, first_entry, tuples in st.buckets:
            if local_depth > st.global_depth:
                raise ProtocolError("bucket deeper than directory")
            bucket = MiniPartition(local_depth, first_entry)
            span = 1 << (st.global_depth - local_depth)
            if first_entry % span != 0 or first_entry + span > len(directory.entries):
                raise ProtocolError("misaligned bucket run")
            for e in range(first_entry, first_entry + span):
                if directory.entries[e] is not None:
                    raise ProtocolError("overlapping bucket runs")
                directory.entries[e] = bucket
            for stream_id in STREAMS:
                side = [t for t in tuples if t.stream_id == stream_id]
                bucket.blocks[stream_id][:] = rebuild_blocks(side, self.block_tuples)
        if any(e is None for e in directory.entries):
            raise ProtocolError("bucket runs do not cover the directory")
        group = PartitionGroup(st.group_id, directory)
        for tup in st.pending:
            group.pending[tup.stream_id].append(tup)
            group.pending_bytes += TUPLE_BYTES
        self.pending_bytes += group.pending_bytes
        self.groups[st.group_id] = group

    # -- introspection --------------------------------------------------------

    def window_bytes(self) -> int:
        return sum(g.tuple_count() for g in self.groups.values()) * TUPLE_BYTES

    def refused_splits(self) -> int:
        return sum(g.directory.refused_splits for g in self.groups.values())

    def backlog_tuples(self) -> int:
        return sum(len(g.pending[S1]) + len(g.pending[S2]) for g in self.groups.values())
