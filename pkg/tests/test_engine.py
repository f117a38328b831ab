import random

import pytest

from streamjoin.core import S1, S2, TUPLE_BYTES, Tuple, WindowSpec, hash_partition
from streamjoin.engine import JoinEngine, Meter
from streamjoin.errors import ProtocolError
from streamjoin.oracle import sliding_join_reference

BIG = 1 << 62


def make_engine(w=1000, n_part=4, block_tuples=4, theta=2, tuning=True, **kw):
    e = JoinEngine(WindowSpec(w, w), n_part, block_tuples, theta, tuning=tuning, **kw)
    for g in range(n_part):
        e.adopt_group(g)
    return e


def key_for_group(gid, n_part, start=0):
    k = start
    while hash_partition(k, n_part) != gid:
        k += 1
    return k


def run_all(engine, tuples, watermark_ms=None, epoch=0):
    engine.ingest_batch(tuples, epoch)
    wm = watermark_ms if watermark_ms is not None else max(
        (t.timestamp for t in tuples), default=0)
    return engine.run_epoch(wm, base_ns=0, budget_ns=BIG)[0]


class TestIngest:
    def test_empty_batch_records_sample(self):
        e = make_engine()
        fill = e.ingest_batch([], epoch_idx=0)
        assert fill == 0.0
        assert e.occupancy_samples == [(0, 0.0)]
        assert e.backlog_tuples() == 0

    def test_tuples_land_in_their_group(self):
        e = make_engine()
        k = key_for_group(2, 4)
        e.ingest_batch([Tuple(S1, i, k, i) for i in range(100)], 0)
        assert len(e.groups[2].pending[S1]) == 100
        assert all(len(e.groups[g].pending[S1]) == 0 for g in (0, 1, 3))

    def test_overflow_is_a_recorded_fault_not_a_drop(self):
        cap_tuples = 8
        e = make_engine(buffer_capacity=cap_tuples * TUPLE_BYTES)
        batch = [Tuple(S1, i, key_for_group(0, 4), i) for i in range(cap_tuples + 1)]
        fill = e.ingest_batch(batch, 0)
        assert e.overload_faults == 1
        assert fill == 1.0
        assert e.backlog_tuples() == cap_tuples + 1

    def test_foreign_group_is_a_protocol_fault(self):
        e = JoinEngine(WindowSpec(10, 10), 4, 4, 2)
        e.adopt_group(0)
        foreign = key_for_group(1, 4)
        with pytest.raises(ProtocolError):
            e.ingest_batch([Tuple(S1, 0, foreign, 0)], 0)


class TestProcessPending:
    def test_single_pair_in_window(self):
        e = make_engine(w=1000)
        k = key_for_group(1, 4)
        results = run_all(e, [Tuple(S1, 100, k, 1), Tuple(S2, 150, k, 2)])
        assert len(results) == 1
        r = results[0]
        assert (r.key, r.ts1, r.ts2, r.id1, r.id2) == (k, 100, 150, 1, 2)

    def test_expired_opposite_no_result(self):
        e = make_engine(w=1000)
        k = key_for_group(1, 4)
        results = run_all(e, [Tuple(S1, 100, k, 1), Tuple(S2, 1101, k, 2)])
        assert results == []

    def test_boundary_is_closed(self):
        e = make_engine(w=1000)
        k = key_for_group(1, 4)
        results = run_all(e, [Tuple(S1, 100, k, 1), Tuple(S2, 1100, k, 2)])
        assert len(results) == 1

    def test_thousand_random_tuples_match_oracle(self):
        rng = random.Random(17)
        e = make_engine(w=300, n_part=4, block_tuples=8, theta=2)
        arrivals = []
        ts = 0
        for i in range(1000):
            ts += rng.randint(0, 5)
            arrivals.append((rng.choice([S1, S2]), ts, rng.randint(0, 40), i))
        tuples = [Tuple(s, t, k, ser) for s, t, k, ser in arrivals]
        got = run_all(e, tuples)
        expected = sliding_join_reference(arrivals, 300, 300)
        assert {(r.id1, r.id2) for r in got} == expected
        assert len(got) == len(expected)  # no duplicates

    def test_full_head_block_triggers_pass_mid_drain(self):
        e = make_engine(w=10_000, n_part=1, block_tuples=4, theta=8)
        k = 5
        batch = [Tuple(S2, 1, k, 100)]
        batch += [Tuple(S1, 10 + i, k, i) for i in range(6)]  # fills one block mid-drain
        e.ingest_batch(batch, 0)
        results, charged = e.run_epoch(20, 0, BIG)
        assert len(results) == 6
        emits = sorted(r.emit_ns for r in results)
        # the full block's four probes emitted before the round's final pass
        assert emits[0] < emits[-1] <= charged

    def test_incremental_batches_match_oracle(self):
        rng = random.Random(23)
        e = make_engine(w=200, n_part=2, block_tuples=4, theta=1)
        arrivals = []
        got = []
        ts = 0
        for epoch in range(20):
            batch = []
            for _ in range(rng.randint(0, 60)):
                ts += rng.randint(0, 4)
                a = (rng.choice([S1, S2]), ts, rng.randint(0, 25), len(arrivals))
                arrivals.append(a)
                batch.append(Tuple(*a[:3], a[3]))
            e.ingest_batch(batch, epoch)
            got += e.run_epoch(ts, base_ns=epoch, budget_ns=BIG)[0]
        expected = sliding_join_reference(arrivals, 200, 200)
        assert {(r.id1, r.id2) for r in got} == expected
        assert len(got) == len(expected)


class TestExpire:
    def test_nothing_expired(self):
        e = make_engine(w=1000)
        k = key_for_group(0, 4)
        run_all(e, [Tuple(S1, 100, k, 1)])
        meter = Meter()
        out = []
        e.expire_blocks(0, horizon_ms=1000, meter=meter, results=out)
        assert out == []
        assert e.groups[0].tuple_count() == 1

    def test_fully_expired_block_removed_silently(self):
        e = make_engine(w=100)
        k = key_for_group(0, 4)
        run_all(e, [Tuple(S1, 10, k, 1)])
        out = []
        e.expire_blocks(0, horizon_ms=500, meter=Meter(), results=out)
        assert out == []
        assert e.groups[0].tuple_count() == 0

    def test_expired_block_joins_opposite_fresh_exactly_once(self):
        # fresh opposite tuple still waiting for its pass when the block goes
        e = make_engine(w=100, block_tuples=4)
        k = key_for_group(0, 4)
        e.ingest_batch([Tuple(S1, 10, k, 1)], 0)
        results, _ = e.run_epoch(10, 0, BIG)
        assert results == []
        bucket = e.groups[0].directory.bucket_for_key(k)
        head = bucket.head(S2, 4)
        head.append(Tuple(S2, 105, k, 2))  # fresh, un-passed
        out = []
        e.expire_blocks(0, horizon_ms=500, meter=Meter(), results=out)
        assert [(r.id1, r.id2) for r in out] == [(1, 2)]
        assert e.groups[0].directory.bucket_for_key(k).blocks[S1] == []
        # its own pass later cannot re-emit: the block is gone
        out2 = []
        e.process_pending(0, Meter(), BIG, out2)
        assert out2 == []

    def test_horizon_held_back_by_backlog(self):
        e = make_engine(w=100)
        k = key_for_group(0, 4)
        run_all(e, [Tuple(S1, 10, k, 1)], watermark_ms=10)
        # a pending tuple with ts=50 must keep the s1 block alive even though
        # the watermark says 500
        e.ingest_batch([Tuple(S2, 50, k, 2)], 1)
        assert e._expiry_horizon(e.groups[0], 500) == 50


class TestTune:
    def test_oversized_bucket_splits_during_epoch(self):
        e = make_engine(w=10_000, n_part=1, block_tuples=2, theta=1)
        tuples = [Tuple(S1, i, i * 7, i) for i in range(64)]
        run_all(e, tuples)
        d = e.groups[0].directory
        d.check_invariants()
        assert d.global_depth >= 1
        for b in d.buckets():
            assert b.total_blocks <= 2 * d.theta_blocks or b.split_refused

    def test_tuning_disabled_keeps_single_bucket(self):
        e = make_engine(w=10_000, n_part=1, block_tuples=2, theta=1, tuning=False)
        run_all(e, [Tuple(S1, i, i * 7, i) for i in range(64)])
        assert e.groups[0].directory.global_depth == 0

    def test_tuning_on_off_same_output(self):
        rng = random.Random(31)
        arrivals = []
        ts = 0
        for i in range(800):
            ts += rng.randint(0, 3)
            arrivals.append((rng.choice([S1, S2]), ts, rng.randint(0, 30), i))
        outs = []
        for tuning in (True, False):
            e = make_engine(w=250, n_part=2, block_tuples=4, theta=1, tuning=tuning)
            got = run_all(e, [Tuple(*a[:3], a[3]) for a in arrivals])
            outs.append({(r.id1, r.id2) for r in got})
        assert outs[0] == outs[1]


class TestBudget:
    def test_budget_cuts_leave_backlog_and_stay_exact(self):
        rng = random.Random(41)
        arrivals = []
        ts = 0
        for i in range(600):
            ts += rng.randint(0, 4)
            arrivals.append((rng.choice([S1, S2]), ts, rng.randint(0, 20), i))
        e = make_engine(w=200, n_part=2, block_tuples=4, theta=1)
        got = []
        # tiny budget: most tuples stay pending each epoch
        for epoch in range(40):
            lo, hi = epoch * 15, (epoch + 1) * 15
            batch = [Tuple(*a[:3], a[3]) for a in arrivals[lo:hi]]
            wm = max((t.timestamp for t in batch), default=ts)
            e.ingest_batch(batch, epoch)
            got += e.run_epoch(wm, 0, budget_ns=20 * e.map_cost_ns)[0]
        got += e.run_epoch(ts, 0, BIG)[0]  # flush
        expected = sliding_join_reference(arrivals, 200, 200)
        assert {(r.id1, r.id2) for r in got} == expected
        assert len(got) == len(expected)


class TestStateTransfer:
    def _loaded_engine(self):
        rng = random.Random(53)
        e = make_engine(w=100_000, n_part=2, block_tuples=4, theta=1)
        tuples = [Tuple(rng.choice([S1, S2]), i, rng.randint(0, 50), i)
                  for i in range(300)]
        run_all(e, tuples)
        e.ingest_batch([Tuple(S1, 400, key_for_group(0, 2), 1000),
                        Tuple(S2, 401, key_for_group(0, 2), 1001)], 1)
        return e

    def test_empty_group_roundtrip(self):
        a = make_engine()
        b = make_engine()
        st = a.extract_state(3)
        assert st.global_depth == 0 and st.pending == []
        del b.groups[3]
        b.install_state(st)
        assert b.groups[3].tuple_count() == 0

    def test_roundtrip_preserves_structure_and_tuples(self):
        a = self._loaded_engine()
        src = a.groups[0]
        depth = src.directory.global_depth
        buckets_before = [(b.local_depth, b.first_entry,
                           sorted(s for side in b.blocks for blk in side for s in blk.serials))
                          for b in src.directory.buckets()]
        pending_before = [t.serial for t in src.pending[S1]] + [t.serial for t in src.pending[S2]]
        wire = a.extract_state(0).encode()
        assert 0 not in a.groups

        from streamjoin.wire import StateTransfer
        st = StateTransfer.decode(wire)
        b_eng = make_engine(w=100_000, n_part=2, block_tuples=4, theta=1)
        del b_eng.groups[0]
        b_eng.install_state(st)
        dst = b_eng.groups[0]
        assert dst.directory.global_depth == depth
        buckets_after = [(b.local_depth, b.first_entry,
                          sorted(s for side in b.blocks for blk in side for s in blk.serials))
                         for b in dst.directory.buckets()]
        assert buckets_after == buckets_before
        dst.directory.check_invariants()
        pending_after = [t.serial for t in dst.pending[S1]] + [t.serial for t in dst.pending[S2]]
        assert sorted(pending_after) == sorted(pending_before)

    def test_pending_replayed_before_new_epoch_tuples(self):
        e = make_engine(w=10_000, n_part=2, block_tuples=8, theta=2)
        k = key_for_group(0, 2)
        e.ingest_batch([Tuple(S1, 100, k, 1)], 0)  # stays pending: no processing yet
        st = e.extract_state(0)
        assert [t.serial for t in st.pending] == [1]
        f = make_engine(w=10_000, n_part=2, block_tuples=8, theta=2)
        del f.groups[0]
        f.install_state(st)
        f.ingest_batch([Tuple(S2, 200, k, 2)], 1)
        results, _ = f.run_epoch(200, 0, BIG)
        assert [(r.id1, r.id2) for r in results] == [(1, 2)]

    def test_unknown_group_faults(self):
        e = make_engine()
        with pytest.raises(ProtocolError):
            e.extract_state(99)

    def test_double_install_faults(self):
        e = make_engine()
        st = e.extract_state(0)
        e.install_state(st)
        with pytest.raises(ProtocolError):
            e.install_state(st)


class TestLoadReport:
    def test_mean_of_samples_then_cleared(self):
        e = make_engine()
        e.occupancy_samples = [(0, 0.2), (1, 0.4)]
        assert e.report_load() == pytest.approx(0.3)
        assert e.occupancy_samples == []
        assert e.report_load() == 0.0
