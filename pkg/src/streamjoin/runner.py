"""Experiment driver: wires workload, master, slaves and collector onto a
backend, runs a configuration, and writes the measurement CSVs.

The simulation backend is fully deterministic: identical (config, seed)
reproduce byte-identical events.csv and results.csv. The socket backend
runs the same protocol over localhost TCP with one thread per node.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass, field

from .config import RunConfig
from .engine import JoinEngine
from .errors import ConfigError
from .master import MasterNode
from .metrics import (
    EVENTS_COLUMNS,
    RESULTS_COLUMNS,
    RUN_RECORD_COLUMNS,
    Collector,
    RunMetrics,
    SlaveAccount,
    finalize_run,
    results_rows,
    write_csv,
)
from .oracle import sliding_join_reference
from .slave import SlaveNode
from .transport import (
    COLLECTOR,
    MASTER,
    LatencyModel,
    NodeClock,
    SimTransport,
    SocketNodeRunner,
    SocketTransport,
    slave_id,
)
from .wire import EpochMessage, Kind, encode_u64
from .workload import WorkloadConfig, arrivals_for, dump_trace, replay_trace

SWEEP_AXES = {"lambda": "lambda_tps", "n_slaves": "n_slaves",
              "t_d": "t_d_sec", "n_g": "n_g"}


@dataclass
class Scenario:
    cfg: RunConfig
    sweep_axis: str | None = None
    sweep_values: list = field(default_factory=list)
    backend: str = "sim"
    name: str = "run"

    def validate(self):
        if self.sweep_axis is not None and self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {sorted(SWEEP_AXES)}")
        if self.sweep_axis is not None and not self.sweep_values:
            raise ConfigError("sweep_values must be non-empty")
        if self.backend not in ("sim", "socket"):
            raise ConfigError("backend must be sim or socket")
        return self


@dataclass
class RunArtifacts:
    cfg: RunConfig
    metrics: RunMetrics
    master: MasterNode | None = None
    slaves: dict | None = None
    collector: Collector | None = None
    transport: object | None = None
    trace: list | None = None
    oracle_ok: bool | None = None
    oracle_expected: int = 0
    duplicates: int = 0
    paths: dict = field(default_factory=dict)


def _tee(it, sink):
    for item in it:
        sink.append(item)
        yield item


def _until(arrivals, duration_ns):
    for a in arrivals:
        if a[0] > duration_ns:
            break
        yield a


def _make_arrivals(cfg: RunConfig, trace_in=None):
    if trace_in:
        return replay_trace(trace_in)
    r1, r2 = cfg.rate
    wc1 = WorkloadConfig(r1, cfg.b, cfg.bmodel_depth, cfg.key_domain,
                         cfg.seed, cfg.arrival_process)
    wc2 = WorkloadConfig(r2, cfg.b, cfg.bmodel_depth, cfg.key_domain,
                         cfg.seed + 1, cfg.arrival_process)
    return arrivals_for(wc1, wc2)


def _oracle_check(art: "RunArtifacts", cfg: RunConfig, trace, collector: Collector):
    expected = sliding_join_reference(
        ((s, a // 10**6, k, ser) for a, s, k, ser in trace),
        cfg.window.w1, cfg.window.w2)
    got = [(r.id1, r.id2) for r in collector.results]
    art.duplicates = len(got) - len(set(got))
    art.oracle_expected = len(expected)
    art.oracle_ok = (set(got) == expected and art.duplicates == 0)


def _fill_metrics(metrics: RunMetrics, master: MasterNode, slaves: dict):
    metrics.peak_master_buffer = tuple(master.buffer.peak_stream_tuples)
    metrics.peak_window_bytes = max((n.peak_window_bytes for n in slaves.values()), default=0)
    metrics.moves = master.moves
    metrics.activates = master.activates
    metrics.deactivates = master.deactivates
    metrics.overload_faults = (master.buffer.overflow_faults
                               + sum(n.engine.overload_faults for n in slaves.values()))
    metrics.refused_splits = sum(n.engine.refused_splits() for n in slaves.values())
    metrics.counters["accepted"] = master.buffer.accepted
    metrics.counters["comparisons"] = sum(n.engine.comparisons for n in slaves.values())


def _build_engine(cfg: RunConfig) -> JoinEngine:
    return JoinEngine(
        window=cfg.window,
        n_part=cfg.n_part,
        block_tuples=cfg.block_tuples,
        theta_blocks=cfg.theta_blocks,
        d_max=cfg.d_max,
        tuning=cfg.tuning,
        buffer_capacity=cfg.buffer_bytes,
        map_cost_ns=cfg.map_cost_ns,
        cmp_cost_ns=cfg.cmp_cost_ns,
        tune_cost_ns=cfg.tune_cost_ns,
    )


def run_simulation(cfg: RunConfig, outdir=None, record_trace=False,
                   keep_results=False, trace_in=None, trace_out=None,
                   scenario="run", run_name=None) -> RunArtifacts:
    cfg.validate()
    duration_ns = cfg.total_epochs * cfg.t_d_ns

    trace = [] if (record_trace or trace_out) else None
    stream = _until(_make_arrivals(cfg, trace_in), duration_ns)
    if trace is not None:
        stream = _tee(stream, trace)

    transport = SimTransport(LatencyModel(cfg.base_latency_ms, cfg.bandwidth_mb_s))
    warmup_ms = cfg.warmup_sec * 1e3
    measure_ms = cfg.measure_sec * 1e3
    collector = Collector(COLLECTOR, warmup_ms, measure_ms, end_ms=duration_ns / 1e6,
                          keep_results=keep_results or record_trace)
    collector.clock = NodeClock()
    transport.register(COLLECTOR, collector)

    all_ids = [slave_id(i) for i in range(cfg.n_slaves)]
    active_ids = all_ids[: cfg.initial_active]
    inactive_ids = all_ids[cfg.initial_active:]
    master = MasterNode(cfg, transport, stream, active_ids, inactive_ids)
    transport.register(MASTER, master)

    slaves = {}
    for sid in all_ids:
        node = SlaveNode(sid, _build_engine(cfg), active=sid in active_ids)
        slaves[sid] = node
        transport.register(sid, node)
    for gid, sid in master.buffer.mapping.items():
        slaves[sid].engine.adopt_group(gid)

    master.run_master_loop()

    accounts = {sid: SlaveAccount(n.clock.busy_ns, n.clock.idle_ns, n.clock.comm_ns)
                for sid, n in slaves.items()}
    metrics = finalize_run(collector, accounts, duration_ns / 1e6)
    _fill_metrics(metrics, master, slaves)

    art = RunArtifacts(cfg=cfg, metrics=metrics, master=master, slaves=slaves,
                       collector=collector, transport=transport, trace=trace)

    if record_trace:
        _oracle_check(art, cfg, trace, collector)
    if trace_out and trace is not None:
        dump_trace(trace_out, trace)
        art.paths["trace"] = trace_out

    if outdir:
        os.makedirs(outdir, exist_ok=True)
        run_name = run_name or scenario
        events_path = os.path.join(outdir, f"{run_name}_events.csv")
        results_path = os.path.join(outdir, f"{run_name}_results.csv")
        record_path = os.path.join(outdir, f"{run_name}_run_record.csv")
        write_csv(events_path, EVENTS_COLUMNS,
                  ((e[0], e[3], e[4], e[5], e[6]) for e in transport.sorted_events()))
        write_csv(results_path, RESULTS_COLUMNS, results_rows(scenario, run_name, cfg, metrics))
        write_csv(record_path, RUN_RECORD_COLUMNS, master.record)
        art.paths.update(events=events_path, results=results_path, run_record=record_path)
    return art


def run_sweep(scenario: Scenario, outdir) -> dict:
    scenario.validate()
    os.makedirs(outdir, exist_ok=True)
    rows = []
    paths = {}
    attr = SWEEP_AXES[scenario.sweep_axis]
    for value in scenario.sweep_values:
        cfg = RunConfig(**{**vars(scenario.cfg), attr: value})
        cfg.validate()
        run_name = f"{scenario.name}_{scenario.sweep_axis}_{value}"
        art = run_simulation(cfg, outdir=outdir, scenario=scenario.name, run_name=run_name)
        rows.extend(results_rows(scenario.name, run_name, cfg, art.metrics))
        paths[value] = art.paths
    summary = os.path.join(outdir, f"{scenario.name}_summary.csv")
    write_csv(summary, RESULTS_COLUMNS, rows)
    paths["summary"] = summary
    return paths


# -- socket backend --------------------------------------------------------------


class SocketMasterDriver(MasterNode):
    """Wall-clock variant of the epoch loop for the socket backend."""

    def __init__(self, cfg, transport: SocketTransport, arrivals,
                 active_ids, inactive_ids):
        super().__init__(cfg, transport, arrivals, active_ids, inactive_ids)
        self.socket_transport = transport

    def _now_ns(self) -> int:
        return self.socket_transport.now_ns()

    def _wait(self, t_ns: int):
        while True:
            dt = t_ns - self.socket_transport.now_ns()
            if dt <= 0:
                return
            time.sleep(min(dt / 1e9, 0.05))


def run_socket(cfg: RunConfig, keep_results=False, record_trace=False) -> RunArtifacts:
    """Run the protocol over localhost TCP, one thread per node."""
    cfg.validate()
    duration_ns = cfg.total_epochs * cfg.t_d_ns

    all_ids = [slave_id(i) for i in range(cfg.n_slaves)]
    active_ids = all_ids[: cfg.initial_active]
    inactive_ids = all_ids[cfg.initial_active:]

    registry: dict[int, int] = {}
    transports: dict[int, SocketTransport] = {}
    for nid in [COLLECTOR] + all_ids:
        tr = SocketTransport(nid, {nid: 0})
        tr.listen()
        registry[nid] = tr.listener.getsockname()[1]
        transports[nid] = tr
    for nid, tr in transports.items():
        tr.registry.update(registry)

    warmup_ms = cfg.warmup_sec * 1e3
    measure_ms = cfg.measure_sec * 1e3
    collector = Collector(COLLECTOR, warmup_ms, measure_ms, end_ms=duration_ns / 1e6,
                          keep_results=keep_results or record_trace)
    slaves = {sid: SlaveNode(sid, _build_engine(cfg), active=sid in active_ids)
              for sid in all_ids}

    threads = [threading.Thread(target=SocketNodeRunner(collector, transports[COLLECTOR]).run,
                                daemon=True)]
    for sid in all_ids:
        threads.append(threading.Thread(target=SocketNodeRunner(slaves[sid], transports[sid]).run,
                                        daemon=True))
    for t in threads:
        t.start()

    trace = [] if record_trace else None
    stream = _until(_make_arrivals(cfg), duration_ns)
    if trace is not None:
        stream = _tee(stream, trace)

    master_tr = SocketTransport(MASTER, dict(registry))
    master = SocketMasterDriver(cfg, master_tr, stream, active_ids, inactive_ids)
    for gid, sid in master.buffer.mapping.items():
        slaves[sid].engine.adopt_group(gid)
    for sid in active_ids:
        master_tr.send(EpochMessage(Kind.ClockSync, MASTER, sid, encode_u64(master_tr.now_ns())))

    master.run_master_loop()
    for t in threads:
        t.join(timeout=10)
    master_tr.close()

    accounts = {sid: SlaveAccount(n.clock.busy_ns, n.clock.idle_ns, n.clock.comm_ns)
                for sid, n in slaves.items()}
    metrics = finalize_run(collector, accounts, duration_ns / 1e6)
    _fill_metrics(metrics, master, slaves)
    art = RunArtifacts(cfg=cfg, metrics=metrics, master=master, slaves=slaves,
                       collector=collector, transport=None, trace=trace)
    if record_trace:
        _oracle_check(art, cfg, trace, collector)
    return art
