"""Processing-node driver around a JoinEngine.

Single-threaded event handler: ingests epoch batches, runs the join within
the CPU budget the batch grants (the budget ends where the next contact is
scheduled, so an overloaded slave accumulates backlog instead of stalling
the cluster), answers load probes, and executes state movement on both the
supplier and the consumer side.
"""

from __future__ import annotations

from .engine import JoinEngine
from .errors import ProtocolError
from .transport import COLLECTOR, MASTER, NodeClock
from .wire import (
    EpochMessage,
    Kind,
    StateTransfer,
    decode_batch,
    decode_move,
    decode_u64,
    encode_load,
    encode_move,
    encode_results,
)


class SlaveNode:
    def __init__(self, node_id: int, engine: JoinEngine, active: bool = True,
                 collector_id: int = COLLECTOR):
        self.node_id = node_id
        self.engine = engine
        self.active = active
        self.collector_id = collector_id
        self.clock = NodeClock()
        self.done = False
        self.clock_offset_ns = 0
        self.peak_window_bytes = 0
        self.epochs_processed = 0
        self.epoch_rows: list[tuple] = []  # (epoch, end_ns, busy_cum, comm_cum, fill, backlog)
        self._expected_moves: set[tuple[int, int]] = set()  # (group_id, supplier)
        self._replies: list[EpochMessage] = []

    def take_reply(self, kind: Kind, sender: int):
        for i, msg in enumerate(self._replies):
            if msg.kind == kind and msg.sender == sender:
                return self._replies.pop(i)
        return None

    # -- dispatch ---------------------------------------------------------------

    def handle_message(self, msg: EpochMessage, transport):
        kind = msg.kind
        if kind == Kind.TupleBatch:
            self.on_distribution(msg, transport)
        elif kind == Kind.LoadRequest:
            transport.send(EpochMessage(Kind.LoadReport, self.node_id, msg.sender,
                                        encode_load(self.report_load())))
        elif kind == Kind.MoveOut:
            self.on_move_out(msg, transport)
        elif kind == Kind.MoveIn:
            group_id, supplier = decode_move(msg.payload)
            self._expected_moves.add((group_id, supplier))
            transport.send(EpochMessage(Kind.Ack, self.node_id, msg.sender,
                                        encode_move(group_id, supplier)))
        elif kind == Kind.StateTransfer:
            self.on_move_in(msg, transport)
        elif kind == Kind.Ack:
            self._replies.append(msg)
        elif kind == Kind.ClockSync:
            self.clock_offset_ns = decode_u64(msg.payload) - msg.recv_ns
            if hasattr(transport, "clock_offset_ns"):  # wall-clock backend adopts it
                transport.clock_offset_ns += self.clock_offset_ns
        elif kind == Kind.Activate:
            self.active = True
        elif kind == Kind.Deactivate:
            if self.engine.groups:
                raise ProtocolError(f"deactivating slave {self.node_id} still owns groups")
            self.active = False
        elif kind == Kind.Shutdown:
            self.done = True
        else:
            raise ProtocolError(f"slave {self.node_id}: unexpected {kind.name}")

    # -- epoch processing ----------------------------------------------------------

    def on_distribution(self, msg: EpochMessage, transport):
        epoch, _slot, _flags, watermark_ms, deadline_ns, tuples = decode_batch(msg.payload)
        fill = self.engine.ingest_batch(tuples, epoch)
        budget = max(0, deadline_ns - msg.recv_ns)
        results, charged = self.engine.run_epoch(watermark_ms, msg.recv_ns, budget)
        self.clock.busy(charged)
        self.peak_window_bytes = max(self.peak_window_bytes, self.engine.window_bytes())
        if results:
            transport.send(EpochMessage(Kind.TupleBatch, self.node_id, self.collector_id,
                                        encode_results(results)))
        self.epochs_processed += 1
        self.epoch_rows.append((epoch, self.clock.cursor_ns, self.clock.busy_ns,
                                self.clock.comm_ns, fill, self.engine.backlog_tuples()))

    def report_load(self) -> float:
        return self.engine.report_load()

    # -- state movement ---------------------------------------------------------------

    def on_move_out(self, msg: EpochMessage, transport):
        group_id, consumer = decode_move(msg.payload)
        st = self.engine.extract_state(group_id)
        payload = st.encode()
        self.clock.busy(self.engine.tune_cost_ns * (sum(len(t) for _, _, t in st.buckets)
                                                    + len(st.pending)))
        transport.send_and_wait(
            EpochMessage(Kind.StateTransfer, self.node_id, consumer, payload), Kind.Ack)
        transport.send(EpochMessage(Kind.Ack, self.node_id, MASTER,
                                    encode_move(group_id, consumer)))

    def on_move_in(self, msg: EpochMessage, transport):
        st = StateTransfer.decode(msg.payload)
        if (st.group_id, msg.sender) not in self._expected_moves:
            raise ProtocolError(
                f"slave {self.node_id}: unannounced transfer of group {st.group_id}")
        self._expected_moves.discard((st.group_id, msg.sender))
        self.engine.install_state(st)
        self.clock.busy(self.engine.tune_cost_ns * (sum(len(t) for _, _, t in st.buckets)
                                                    + len(st.pending)))
        transport.send(EpochMessage(Kind.Ack, self.node_id, msg.sender,
                                    encode_move(st.group_id, msg.sender)))
