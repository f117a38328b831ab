"""Measurement pipeline: the collector node and run-level aggregation.

The collector is a plain node on the transport: slaves ship their emitted
pairs to it in per-epoch result batches and it folds them into tumbling
per-interval aggregates. Samples earlier than the warmup horizon are
discarded; delays are reported as absent (empty CSV cells) when an interval
produced no output rather than fabricated as zero.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .errors import MetricsError
from .wire import Kind, decode_results


class JoinResult(NamedTuple):
    key: int
    ts1: int      # ms
    ts2: int      # ms
    emit_ns: int  # virtual clock at emission
    id1: int      # constituent serials
    id2: int


def production_delay(r: JoinResult) -> float:
    """Elapsed ms between the newer constituent's arrival and the emission."""
    return r.emit_ns / 1e6 - max(r.ts1, r.ts2)


@dataclass
class IntervalStats:
    count: int = 0
    delay_sum: float = 0.0
    delay_max: float = 0.0

    @property
    def avg_delay(self) -> Optional[float]:
        return self.delay_sum / self.count if self.count else None

    @property
    def max_delay(self) -> Optional[float]:
        return self.delay_max if self.count else None


class Collector:
    """Merges slave result streams; its own single-threaded node.

    Interval aggregates cover [warmup, end): emissions outside the window
    (before warmup, or during the end-of-run flush) still count toward the
    totals and the retained result list, but not toward any interval.
    """

    def __init__(self, node_id: int, warmup_ms: float, measure_ms: float,
                 end_ms: float = float("inf"), keep_results: bool = False):
        self.node_id = node_id
        self.warmup_ms = warmup_ms
        self.measure_ms = measure_ms
        self.end_ms = end_ms
        self.keep_results = keep_results
        self.results: list[JoinResult] = []
        self.intervals: dict[int, IntervalStats] = {}
        self.total = 0
        self.done = False

    def handle_message(self, msg, transport=None):
        if msg.kind == Kind.Shutdown:
            self.done = True
            return
        if msg.kind != Kind.TupleBatch:
            return
        for r in decode_results(msg.payload):
            self.total += 1
            if self.keep_results:
                self.results.append(r)
            emit_ms = r.emit_ns / 1e6
            if emit_ms < self.warmup_ms or emit_ms >= self.end_ms:
                continue
            idx = int((emit_ms - self.warmup_ms) // self.measure_ms)
            stats = self.intervals.setdefault(idx, IntervalStats())
            stats.count += 1
            d = production_delay(r)
            stats.delay_sum += d
            stats.delay_max = max(stats.delay_max, d)


@dataclass
class SlaveAccount:
    busy_ns: int = 0
    idle_ns: int = 0
    comm_ns: int = 0

    @property
    def elapsed_ns(self) -> int:
        return self.busy_ns + self.idle_ns + self.comm_ns


@dataclass
class RunMetrics:
    duration_ms: float
    warmup_ms: float
    measure_ms: float
    intervals: dict[int, IntervalStats]
    accounts: dict[int, SlaveAccount]
    peak_master_buffer: tuple[int, int] = (0, 0)   # per-stream tuples
    peak_window_bytes: int = 0
    total_results: int = 0
    moves: int = 0
    activates: int = 0
    deactivates: int = 0
    overload_faults: int = 0
    refused_splits: int = 0
    counters: dict = field(default_factory=dict)

    @property
    def avg_delay_ms(self) -> Optional[float]:
        n = sum(s.count for s in self.intervals.values())
        if n == 0:
            return None
        return sum(s.delay_sum for s in self.intervals.values()) / n

    @property
    def max_delay_ms(self) -> Optional[float]:
        vals = [s.delay_max for s in self.intervals.values() if s.count]
        return max(vals) if vals else None

    def interval_rows(self):
        if not self.intervals:
            yield 0, IntervalStats()
            return
        for idx in sorted(self.intervals):
            yield idx, self.intervals[idx]


def finalize_run(collector: Collector, accounts, duration_ms: float) -> RunMetrics:
    if duration_ms <= collector.warmup_ms:
        raise MetricsError("measurement window is empty: run ends inside warmup")
    return RunMetrics(
        duration_ms=duration_ms,
        warmup_ms=collector.warmup_ms,
        measure_ms=collector.measure_ms,
        intervals=dict(collector.intervals),
        accounts=dict(accounts),
        total_results=collector.total,
    )


RESULTS_COLUMNS = [
    "scenario", "run", "interval", "t_start_ms", "t_end_ms",
    "lambda_tps", "n_slaves", "n_g", "t_d_sec", "tuning",
    "results", "avg_delay_ms", "max_delay_ms",
    "busy_ms", "idle_ms", "comm_ms",
    "peak_master_buf_s1", "peak_master_buf_s2", "peak_window_bytes",
    "moves", "activates", "deactivates", "overload_faults", "refused_splits",
]

EVENTS_COLUMNS = ["virtual_time", "kind", "sender", "receiver", "bytes"]

RUN_RECORD_COLUMNS = [
    "epoch_index", "event_type", "slave_id", "group_id",
    "occupancy", "batch_bytes", "latency_ms",
]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def results_rows(scenario: str, run: str, cfg, metrics: RunMetrics):
    busy = sum(a.busy_ns for a in metrics.accounts.values()) / 1e6
    idle = sum(a.idle_ns for a in metrics.accounts.values()) / 1e6
    comm = sum(a.comm_ns for a in metrics.accounts.values()) / 1e6
    for idx, stats in metrics.interval_rows():
        t0 = metrics.warmup_ms + idx * metrics.measure_ms
        yield [
            scenario, run, idx, t0, t0 + metrics.measure_ms,
            cfg.lambda_tps, cfg.n_slaves, cfg.n_g, cfg.t_d_sec, int(cfg.tuning),
            stats.count, stats.avg_delay, stats.max_delay,
            busy, idle, comm,
            metrics.peak_master_buffer[0], metrics.peak_master_buffer[1],
            metrics.peak_window_bytes,
            metrics.moves, metrics.activates, metrics.deactivates,
            metrics.overload_faults, metrics.refused_splits,
        ]
