"""Gateway node: tuple distribution, load classification, reorganization.

The master buffers arrivals into per-partition mini-buffers, ships them to
the owning slaves at fixed sub-group slots inside every distribution epoch,
and at every reorganization epoch collects occupancy reports, pairs
suppliers with consumers for single-group state moves, and adapts the
degree of declustering (the number of active slaves).

Sequencing at a reorganization boundary: load reports and move
announcements first, then the regular slot-ordered distribution to every
slave not involved in a move, then the state transfers and their
acknowledgements, then the declustering adjustment, and finally the held
batches for the move participants (tagged with the sentinel slot n_g so the
global (epoch, slot, slave) batch order stays monotone). Mapping updates
happen strictly after both transfer acknowledgements.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .config import RunConfig
from .core import TUPLE_BYTES, Tuple, hash_partition
from .errors import ProtocolError
from .transport import COLLECTOR, MASTER, NodeClock, SimTransport
from .wire import (
    BATCH_REORG_TAIL,
    EpochMessage,
    Kind,
    decode_load,
    encode_batch,
    encode_move,
    encode_u64,
)


class Role(str, Enum):
    SUPPLIER = "supplier"
    CONSUMER = "consumer"
    NEUTRAL = "neutral"


@dataclass
class NodeState:
    slave_id: int
    active: bool = True
    occupancy: float = 0.0
    role: Role = Role.NEUTRAL
    groups: set[int] = field(default_factory=set)


@dataclass(frozen=True)
class MoveInstruction:
    supplier: int
    consumer: int
    group_id: int


def classify(occupancy: float, th_sup: float, th_con: float) -> Role:
    if occupancy > th_sup:
        return Role.SUPPLIER
    if occupancy < th_con:
        return Role.CONSUMER
    return Role.NEUTRAL


def classify_slaves(reports, th_sup: float, th_con: float) -> dict[int, Role]:
    """reports: iterable of (slave_id, occupancy in [0,1]); deterministic."""
    out = {}
    for sid, f in reports:
        if not (0.0 <= f <= 1.0):
            raise ProtocolError(f"slave {sid} reported occupancy {f}")
        out[sid] = classify(f, th_sup, th_con)
    return out


def plan_reorganization(states, rng: random.Random) -> list[MoveInstruction]:
    """Pair suppliers with consumers in one ascending-id scan.

    Each supplier yields one group, chosen uniformly from its assignment;
    suppliers that own nothing are skipped. At most min(#sup, #con) moves.
    """
    suppliers = [s for s in sorted(states, key=lambda s: s.slave_id)
                 if s.active and s.role == Role.SUPPLIER and s.groups]
    consumers = [s for s in sorted(states, key=lambda s: s.slave_id)
                 if s.active and s.role == Role.CONSUMER]
    moves = []
    for sup, con in zip(suppliers, consumers):
        gid = rng.choice(sorted(sup.groups))
        moves.append(MoveInstruction(sup.slave_id, con.slave_id, gid))
    return moves


class DeclusterAction(str, Enum):
    INCREASE = "increase"
    DECREASE = "decrease"
    HOLD = "hold"


def adjust_declustering(states, beta: float) -> DeclusterAction:
    active = [s for s in states if s.active]
    n_sup = sum(1 for s in active if s.role == Role.SUPPLIER)
    n_con = sum(1 for s in active if s.role == Role.CONSUMER)
    if n_sup == 0:
        return DeclusterAction.DECREASE
    if n_sup > beta * n_con:
        return DeclusterAction.INCREASE
    return DeclusterAction.HOLD


def predicted_peak_buffer(rate_tps: float, t_d_sec: float, n_g: int) -> float:
    """Peak per-stream master-buffer tuples under uniform arrivals."""
    return (rate_tps * t_d_sec / 2.0) * (1.0 + 1.0 / n_g)


class MasterBuffer:
    """Per-stream mini-buffers, one per partition, plus the group->slave map."""

    def __init__(self, n_part: int, capacity_bytes: int = 0):
        self.n_part = n_part
        self.capacity_bytes = capacity_bytes  # 0 = unbounded
        self.minibuffers = ([deque() for _ in range(n_part)],
                            [deque() for _ in range(n_part)])
        self.mapping: dict[int, int] = {}
        self.stream_tuples = [0, 0]
        self.peak_stream_tuples = [0, 0]
        self.accepted = 0
        self.overflow_faults = 0

    def accept_tuple(self, tup: Tuple) -> int:
        gid = hash_partition(tup.join_key, self.n_part)
        self.minibuffers[tup.stream_id][gid].append(tup)
        self.stream_tuples[tup.stream_id] += 1
        self.accepted += 1
        if self.capacity_bytes and (sum(self.stream_tuples) * TUPLE_BYTES > self.capacity_bytes):
            self.overflow_faults += 1
        return gid

    def sample_peaks(self):
        for s in (0, 1):
            if self.stream_tuples[s] > self.peak_stream_tuples[s]:
                self.peak_stream_tuples[s] = self.stream_tuples[s]

    def drain_for(self, slave: int) -> list[Tuple]:
        out = []
        for gid in sorted(g for g, s in self.mapping.items() if s == slave):
            for stream in (0, 1):
                buf = self.minibuffers[stream][gid]
                self.stream_tuples[stream] -= len(buf)
                out.extend(buf)
                buf.clear()
        return out


class MasterNode:
    """Drives the epoch protocol over a simulation transport."""

    def __init__(self, cfg: RunConfig, transport: SimTransport, arrivals,
                 active_ids: list[int], inactive_ids: list[int]):
        self.cfg = cfg
        self.transport = transport
        self.arrivals = arrivals  # iterator of (arrival_ns, stream, key, serial)
        self.clock = NodeClock()
        self.buffer = MasterBuffer(cfg.n_part, int(cfg.master_buffer_mb * 1024 * 1024))
        self.states = {sid: NodeState(sid) for sid in active_ids}
        for sid in inactive_ids:
            self.states[sid] = NodeState(sid, active=False)
        self.rng = random.Random(f"{cfg.seed}:master")
        self.record: list[tuple] = []  # run-record rows
        self.moves = 0
        self.activates = 0
        self.deactivates = 0
        self._replies: list[EpochMessage] = []
        self._next_arrival = None
        for gid in range(cfg.n_part):
            sid = active_ids[gid % len(active_ids)]
            self.buffer.mapping[gid] = sid
            self.states[sid].groups.add(gid)

    # -- time source (overridden by the socket driver) ---------------------------

    def _now_ns(self) -> int:
        return self.clock.cursor_ns

    def _wait(self, t_ns: int):
        self.transport.advance_clock(t_ns)
        self.clock.wait_until(t_ns)

    # -- plumbing ---------------------------------------------------------------

    def take_reply(self, kind: Kind, sender: int):
        for i, msg in enumerate(self._replies):
            if msg.kind == kind and msg.sender == sender:
                return self._replies.pop(i)
        return None

    def handle_message(self, msg: EpochMessage, transport):
        if msg.kind in (Kind.LoadReport, Kind.Ack):
            self._replies.append(msg)
        else:
            raise ProtocolError(f"master: unexpected {msg.kind.name}")

    def active_ids(self) -> list[int]:
        return sorted(s.slave_id for s in self.states.values() if s.active)

    def inactive_ids(self) -> list[int]:
        return sorted(s.slave_id for s in self.states.values() if not s.active)

    def validate_mapping(self):
        owned = sorted(self.buffer.mapping)
        if owned != list(range(self.cfg.n_part)):
            raise ProtocolError("mapping does not cover the partition space")
        actives = set(self.active_ids())
        seen = set()
        for sid in self.states.values():
            if sid.groups & seen:
                raise ProtocolError("group owned twice")
            seen |= sid.groups
            if sid.groups and sid.slave_id not in actives:
                raise ProtocolError("inactive slave owns groups")

    # -- arrivals -----------------------------------------------------------------

    def _pump_arrivals(self, until_ns: int):
        """Buffer every arrival at or before until_ns, stamping master time."""
        nxt = self._next_arrival
        while True:
            if nxt is None:
                nxt = next(self.arrivals, None)
                if nxt is None:
                    break
            if nxt[0] > until_ns:
                break
            arrival_ns, stream, key, serial = nxt
            self.accept_tuple(Tuple(stream, arrival_ns // 10**6, key, serial))
            nxt = None
        self._next_arrival = nxt

    def accept_tuple(self, tup: Tuple) -> int:
        return self.buffer.accept_tuple(tup)

    # -- distribution ----------------------------------------------------------------

    def _subgroups(self, actives: list[int], n_g_eff: int) -> list[list[int]]:
        groups = [[] for _ in range(n_g_eff)]
        for i, sid in enumerate(actives):
            groups[i % n_g_eff].append(sid)
        return groups

    def _send_batch(self, sid: int, epoch: int, slot: int, deadline_ns: int, flags: int = 0):
        self._pump_arrivals(self._now_ns())
        watermark_ms = self._now_ns() // 10**6
        tuples = self.buffer.drain_for(sid)
        payload = encode_batch(epoch, slot, watermark_ms, deadline_ns, tuples, flags)
        t0 = self._now_ns()
        self.transport.send(EpochMessage(Kind.TupleBatch, MASTER, sid, payload))
        self.record.append((epoch, "batch", sid, "", "", len(tuples) * TUPLE_BYTES,
                            (self._now_ns() - t0) / 1e6))

    def distribute_epoch(self, epoch: int, slot: int, subgroup: list[int],
                         skip: set[int], slot_len_ns: int):
        for sid in subgroup:
            if sid in skip:
                continue
            deadline = (epoch + 1) * self.cfg.t_d_ns + slot * slot_len_ns
            self._send_batch(sid, epoch, slot, deadline)

    # -- reorganization ----------------------------------------------------------------

    def _collect_reports(self, epoch: int) -> list[tuple[int, float]]:
        reports = []
        for sid in self.active_ids():
            reply = self.transport.send_and_wait(
                EpochMessage(Kind.LoadRequest, MASTER, sid), Kind.LoadReport)
            f = decode_load(reply.payload)
            reports.append((sid, f))
            self.record.append((epoch, "report", sid, "", f, "", ""))
        return reports

    def _execute_move(self, epoch: int, move: MoveInstruction):
        # announce first and wait for the consumer's ack so the transfer can
        # never outrun the announcement on an independent channel
        self.transport.send_and_wait(
            EpochMessage(Kind.MoveIn, MASTER, move.consumer,
                         encode_move(move.group_id, move.supplier)), Kind.Ack)
        self.transport.send_and_wait(
            EpochMessage(Kind.MoveOut, MASTER, move.supplier,
                         encode_move(move.group_id, move.consumer)), Kind.Ack)
        # both acks are in: flip the mapping
        self.buffer.mapping[move.group_id] = move.consumer
        self.states[move.supplier].groups.discard(move.group_id)
        self.states[move.consumer].groups.add(move.group_id)
        self.moves += 1
        self.record.append((epoch, "move", move.supplier, move.group_id, "", "", ""))

    def _plan(self, epoch: int) -> list[MoveInstruction]:
        plan = plan_reorganization(list(self.states.values()), self.rng)
        if not plan and self.cfg.force_moves:
            actives = [self.states[sid] for sid in self.active_ids()]
            donors = [s for s in actives if s.groups]
            if len(actives) >= 2 and donors:
                donor = max(donors, key=lambda s: (len(s.groups), -s.slave_id))
                others = [s for s in actives if s.slave_id != donor.slave_id]
                target = min(others, key=lambda s: (len(s.groups), s.slave_id))
                gid = self.rng.choice(sorted(donor.groups))
                plan = [MoveInstruction(donor.slave_id, target.slave_id, gid)]
        return plan

    def _decrease(self, epoch: int) -> set[int]:
        actives = self.active_ids()
        if len(actives) <= 1:
            return set()
        candidates = [self.states[sid] for sid in actives
                      if self.states[sid].role == Role.CONSUMER]
        if not candidates:
            candidates = [self.states[sid] for sid in actives
                          if self.states[sid].role == Role.NEUTRAL]
        if not candidates:
            return set()
        victim = min(candidates, key=lambda s: (s.occupancy, -s.slave_id))
        rest = [sid for sid in actives if sid != victim.slave_id]
        touched = set()
        for i, gid in enumerate(sorted(victim.groups)):
            target = rest[i % len(rest)]
            self._execute_move(epoch, MoveInstruction(victim.slave_id, target, gid))
            touched.add(target)
        self.transport.send(EpochMessage(Kind.Deactivate, MASTER, victim.slave_id))
        self.states[victim.slave_id].active = False
        self.states[victim.slave_id].groups.clear()
        self.deactivates += 1
        self.record.append((epoch, "deactivate", victim.slave_id, "", "", "", ""))
        return touched

    def _increase(self, epoch: int) -> bool:
        spare = self.inactive_ids()
        if not spare:
            self.record.append((epoch, "increase_held", "", "", "", "", ""))
            return False
        sid = spare[0]
        self.transport.send(EpochMessage(Kind.Activate, MASTER, sid))
        self.states[sid].active = True
        self.states[sid].role = Role.CONSUMER  # reports f=0 until its first full interval
        self.activates += 1
        self.record.append((epoch, "activate", sid, "", "", "", ""))
        return True

    # -- main loop -------------------------------------------------------------------

    def run_master_loop(self):
        cfg = self.cfg
        for epoch in range(cfg.total_epochs):
            t0 = epoch * cfg.t_d_ns
            reorg_due = epoch > 0 and epoch % cfg.epochs_per_reorg == 0
            participants: set[int] = set()
            plan: list[MoveInstruction] = []
            if reorg_due:
                self._wait(t0)
                reports = self._collect_reports(epoch)
                roles = classify_slaves(reports, cfg.th_sup, cfg.th_con)
                for sid, f in reports:
                    self.states[sid].occupancy = f
                    self.states[sid].role = roles[sid]
                    self.record.append((epoch, roles[sid].value, sid, "", f, "", ""))
                plan = self._plan(epoch)
                participants = {m.supplier for m in plan} | {m.consumer for m in plan}
            actives = self.active_ids()
            n_g_eff = min(cfg.n_g, len(actives))
            slot_len = cfg.t_d_ns // n_g_eff
            subgroups = self._subgroups(actives, n_g_eff)
            for slot in range(n_g_eff):
                t_slot = t0 + slot * slot_len
                self._wait(t_slot)
                self._pump_arrivals(self._now_ns())
                self.buffer.sample_peaks()
                self.record.append((epoch, "buffer_s1", "", "", self.buffer.stream_tuples[0], "", ""))
                self.record.append((epoch, "buffer_s2", "", "", self.buffer.stream_tuples[1], "", ""))
                self.distribute_epoch(epoch, slot, subgroups[slot], participants, slot_len)
            if reorg_due:
                for move in plan:
                    self._execute_move(epoch, move)
                if cfg.adaptive:
                    action = adjust_declustering(list(self.states.values()), cfg.beta)
                    if action is DeclusterAction.DECREASE:
                        participants |= self._decrease(epoch)
                    elif action is DeclusterAction.INCREASE:
                        self._increase(epoch)
                # held batches for move participants, after every ack
                tail = sorted(participants & set(self.active_ids()))
                for sid in tail:
                    deadline = (epoch + 1) * cfg.t_d_ns + self._slot_of(sid) * slot_len
                    self._send_batch(sid, epoch, n_g_eff, deadline, flags=BATCH_REORG_TAIL)
                for sid in self.active_ids():
                    self.transport.send(EpochMessage(Kind.ClockSync, MASTER, sid,
                                                     encode_u64(self._now_ns())))
                self.validate_mapping()
        end_ns = cfg.total_epochs * cfg.t_d_ns
        self._wait(end_ns)
        # final flush: deliver everything still buffered and let the slaves
        # drain their backlog, so every accepted tuple reaches its owner
        for sid in self.active_ids():
            self._send_batch(sid, cfg.total_epochs, 0, deadline_ns=1 << 62)
        for sid in self.active_ids() + self.inactive_ids():
            self.transport.send(EpochMessage(Kind.Shutdown, MASTER, sid))
        self.transport.send(EpochMessage(Kind.Shutdown, MASTER, COLLECTOR))

    def _slot_of(self, sid: int) -> int:
        actives = self.active_ids()
        n_g_eff = min(self.cfg.n_g, len(actives))
        return actives.index(sid) % n_g_eff
