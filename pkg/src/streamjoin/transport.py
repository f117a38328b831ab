"""Synchronous message layer with two interchangeable backends.

Simulation backend: single-threaded, integer-nanosecond virtual clocks.
A send is a rendezvous: it starts when both endpoints' clocks have reached
it (waiting is charged as idle time), then both sides are charged the
transfer latency base + bytes/bandwidth as communication time, and the
receiver's handler runs inline. Timer events fire in (time, sender_id,
sequence) order, so identical (config, seed) replays produce byte-identical
event logs.

Socket backend: the same frames over persistent localhost TCP connections,
one duplex channel per (master, slave) pair plus lazily opened direct
supplier-consumer channels. Blocking reads realize the synchronous
contract; virtual accounting does not apply.

The simulation asserts the fixed communication order: tuple batches bound
for slaves must carry strictly increasing (epoch, slot, slave) tags.
"""

from __future__ import annotations

import heapq
import selectors
import socket
import struct
import time

from .errors import ProtocolError, SlotViolation
from .wire import FRAME, EpochMessage, Kind, encode_frame, peek_batch_slot

MASTER = 0
COLLECTOR = 1
FIRST_SLAVE = 2


def slave_id(index: int) -> int:
    return FIRST_SLAVE + index


class NodeClock:
    """Virtual-time cursor plus busy/idle/comm accounting (integer ns)."""

    __slots__ = ("cursor_ns", "busy_ns", "idle_ns", "comm_ns")

    def __init__(self):
        self.cursor_ns = 0
        self.busy_ns = 0
        self.idle_ns = 0
        self.comm_ns = 0

    def wait_until(self, t_ns: int):
        if t_ns > self.cursor_ns:
            self.idle_ns += t_ns - self.cursor_ns
            self.cursor_ns = t_ns

    def busy(self, ns: int):
        self.busy_ns += ns
        self.cursor_ns += ns

    def comm(self, ns: int):
        self.comm_ns += ns
        self.cursor_ns += ns


class LatencyModel:
    def __init__(self, base_latency_ms: float = 0.1, bandwidth_mb_s: float = 125.0):
        self.base_ns = int(round(base_latency_ms * 1e6))
        self.bytes_per_sec = bandwidth_mb_s * 1e6

    def latency_ns(self, nbytes: int) -> int:
        if self.bytes_per_sec <= 0:
            return self.base_ns
        return self.base_ns + int(nbytes * 1e9 / self.bytes_per_sec)


class SimTransport:
    """Deterministic in-process backend driving node handlers inline."""

    def __init__(self, latency: LatencyModel | None = None):
        self.latency = latency or LatencyModel()
        self.nodes: dict[int, object] = {}
        self.events: list[tuple] = []  # (recv_ns, send_ns, seq, kind, sender, receiver, bytes)
        self._timers: list[tuple] = []
        self._seq = 0
        self._last_batch_key: tuple | None = None
        self.batch_keys: list[tuple] = []  # (epoch, slot, slave) per delivered batch
        self.deliveries: list[EpochMessage] = []
        self.record_deliveries = False

    def register(self, node_id: int, node):
        self.nodes[node_id] = node

    # -- sending -----------------------------------------------------------------

    def send(self, msg: EpochMessage) -> int:
        """Rendezvous delivery; returns the receive timestamp."""
        sender = self.nodes[msg.sender]
        receiver = self.nodes.get(msg.receiver)
        if receiver is None:
            raise ProtocolError(f"send on closed channel to node {msg.receiver}")
        start = max(sender.clock.cursor_ns, receiver.clock.cursor_ns)
        sender.clock.wait_until(start)
        receiver.clock.wait_until(start)
        nbytes = FRAME.size + len(msg.payload)
        lat = self.latency.latency_ns(nbytes)
        sender.clock.comm(lat)
        receiver.clock.comm(lat)
        msg.send_ns = start
        msg.recv_ns = start + lat
        if msg.kind == Kind.TupleBatch and msg.receiver >= FIRST_SLAVE:
            epoch, slot, _ = peek_batch_slot(msg.payload)
            key = (epoch, slot, msg.receiver)
            if self._last_batch_key is not None and key <= self._last_batch_key:
                raise SlotViolation(
                    f"batch {key} sent out of order after {self._last_batch_key}")
            self._last_batch_key = key
            self.batch_keys.append(key)
        self._seq += 1
        self.events.append((msg.recv_ns, msg.send_ns, self._seq, msg.kind.name,
                            msg.sender, msg.receiver, nbytes))
        if self.record_deliveries:
            self.deliveries.append(msg)
        receiver.handle_message(msg, self)
        return msg.recv_ns

    def send_and_wait(self, msg: EpochMessage, reply_kind: Kind) -> EpochMessage:
        """Send, then surface the reply the nested dispatch left at the sender."""
        self.send(msg)
        reply = self.nodes[msg.sender].take_reply(reply_kind, msg.receiver)
        if reply is None:
            raise ProtocolError(
                f"node {msg.sender} got no {reply_kind.name} from {msg.receiver}")
        return reply

    # -- timers --------------------------------------------------------------------

    def schedule(self, t_ns: int, sender_id: int, fn):
        self._seq += 1
        heapq.heappush(self._timers, (t_ns, sender_id, self._seq, fn))

    def advance_clock(self, until_ns: int) -> int:
        """Fire timer events with t <= until, in (t, sender, seq) order."""
        fired = 0
        while self._timers and self._timers[0][0] <= until_ns:
            t_ns, _sender, _seq, fn = heapq.heappop(self._timers)
            fn(t_ns)
            fired += 1
        return fired

    def sorted_events(self):
        return sorted(self.events, key=lambda e: (e[0], e[4], e[2]))


# -- socket backend ----------------------------------------------------------------


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except TimeoutError as e:
            raise ProtocolError("timed out waiting for the peer") from e
        if not chunk:
            raise ProtocolError("peer closed the channel")
        buf += chunk
    return buf


def recv_frame(sock: socket.socket) -> EpochMessage:
    head = _recv_exact(sock, FRAME.size)
    kind, sender, receiver, n = FRAME.unpack(head)
    payload = _recv_exact(sock, n) if n else b""
    return EpochMessage(Kind(kind), sender, receiver, payload)


_HELLO = struct.Struct("<H")


class SocketTransport:
    """Stream-socket backend: persistent duplex channel per peer pair."""

    def __init__(self, node_id: int, registry: dict[int, int], host: str = "127.0.0.1"):
        self.node_id = node_id
        self.registry = registry  # node_id -> port
        self.host = host
        self.channels: dict[int, socket.socket] = {}
        self.listener: socket.socket | None = None
        self.clock_offset_ns = 0
        self._t0 = time.monotonic_ns()

    def now_ns(self) -> int:
        return time.monotonic_ns() - self._t0 + self.clock_offset_ns

    def listen(self):
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        s.bind((self.host, self.registry[self.node_id]))
        s.listen(16)
        self.listener = s
        return s

    def accept(self) -> tuple[int, socket.socket]:
        conn, _ = self.listener.accept()
        (peer,) = _HELLO.unpack(_recv_exact(conn, _HELLO.size))
        self.channels[peer] = conn
        return peer, conn

    def channel(self, peer: int) -> socket.socket:
        ch = self.channels.get(peer)
        if ch is None:
            ch = socket.create_connection((self.host, self.registry[peer]), timeout=10)
            ch.sendall(_HELLO.pack(self.node_id))
            self.channels[peer] = ch
        return ch

    def send(self, msg: EpochMessage) -> int:
        self.channel(msg.receiver).sendall(encode_frame(msg))
        return self.now_ns()

    def send_and_wait(self, msg: EpochMessage, reply_kind: Kind) -> EpochMessage:
        ch = self.channel(msg.receiver)
        ch.sendall(encode_frame(msg))
        reply = recv_frame(ch)
        reply.recv_ns = self.now_ns()
        if reply.kind != reply_kind:
            raise ProtocolError(f"expected {reply_kind.name}, got {reply.kind.name}")
        return reply

    def close(self):
        for ch in self.channels.values():
            try:
                ch.close()
            except OSError:
                pass
        if self.listener:
            self.listener.close()


class SocketNodeRunner:
    """Select loop feeding a node's handle_message; used by slaves and collector."""

    def __init__(self, node, transport: SocketTransport):
        self.node = node
        self.transport = transport

    def run(self):
        sel = selectors.DefaultSelector()
        tr = self.transport
        if tr.listener is None:
            tr.listen()
        sel.register(tr.listener, selectors.EVENT_READ, "accept")
        watched: set = set()

        def sync_channels():
            # handlers may dial peers lazily (state transfers); watch those
            # sockets too, since the peer can initiate on them later
            for peer, sock in list(tr.channels.items()):
                if sock not in watched:
                    sel.register(sock, selectors.EVENT_READ, peer)
                    watched.add(sock)

        while not getattr(self.node, "done", False):
            sync_channels()
            for key, _ in sel.select(timeout=1.0):
                if key.data == "accept":
                    tr.accept()
                    continue
                try:
                    msg = recv_frame(key.fileobj)
                except ProtocolError:
                    sel.unregister(key.fileobj)
                    watched.discard(key.fileobj)
                    continue
                msg.recv_ns = tr.now_ns()
                self.node.handle_message(msg, tr)
                sync_channels()
        tr.close()
