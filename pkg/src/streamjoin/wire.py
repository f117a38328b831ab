"""Bit-exact wire formats: message framing and payload codecs.

Frame header: kind u8 | sender u16 | receiver u16 | payload length u32,
all little-endian, followed by the payload bytes.

State transfer layout: group_id u32 | global depth u8 | bucket count u16,
then one (local depth u8, first entry u16, tuple count u32) record per
bucket, then every bucket's tuples in the 64-byte tuple format, then the
pending-buffer tuples behind a u32 count prefix.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

from .core import TUPLE_BYTES, Tuple, decode_tuple, encode_tuple
from .errors import ProtocolError


class Kind(IntEnum):
    TupleBatch = 1
    LoadReport = 2
    LoadRequest = 3
    MoveOut = 4
    MoveIn = 5
    StateTransfer = 6
    Ack = 7
    ClockSync = 8
    Activate = 9
    Deactivate = 10
    Shutdown = 11


FRAME = struct.Struct("<BHHI")


@dataclass
class EpochMessage:
    kind: Kind
    sender: int
    receiver: int
    payload: bytes = b""
    send_ns: int = 0
    recv_ns: int = 0


def encode_frame(msg: EpochMessage) -> bytes:
    return FRAME.pack(msg.kind, msg.sender, msg.receiver, len(msg.payload)) + msg.payload


def decode_frame(buf: bytes) -> tuple[EpochMessage, int]:
    kind, sender, receiver, n = FRAME.unpack_from(buf, 0)
    end = FRAME.size + n
    if len(buf) < end:
        raise ProtocolError("truncated frame")
    return EpochMessage(Kind(kind), sender, receiver, buf[FRAME.size:end]), end


# -- tuple batches ------------------------------------------------------------

_BATCH_HEAD = struct.Struct("<IHBQQI")  # epoch, slot, flags, watermark_ms, deadline_ns, count

BATCH_REORG_TAIL = 0x01  # delivered in the post-ack phase of a reorganization


def encode_batch(epoch: int, slot: int, watermark_ms: int, deadline_ns: int,
                 tuples, flags: int = 0) -> bytes:
    body = b"".join(encode_tuple(t) for t in tuples)
    return _BATCH_HEAD.pack(epoch, slot, flags, watermark_ms, deadline_ns, len(body) // TUPLE_BYTES) + body


def decode_batch(payload: bytes):
    epoch, slot, flags, watermark_ms, deadline_ns, count = _BATCH_HEAD.unpack_from(payload, 0)
    off = _BATCH_HEAD.size
    tuples = [decode_tuple(payload, off + i * TUPLE_BYTES) for i in range(count)]
    return epoch, slot, flags, watermark_ms, deadline_ns, tuples


def peek_batch_slot(payload: bytes) -> tuple[int, int, int]:
    epoch, slot, flags = struct.unpack_from("<IHB", payload, 0)
    return epoch, slot, flags


# -- state transfers -----------------------------------------------------------

_ST_HEAD = struct.Struct("<IBH")
_ST_BUCKET = struct.Struct("<BHI")
_U32 = struct.Struct("<I")


@dataclass
class StateTransfer:
    group_id: int
    global_depth: int
    buckets: list  # (local_depth, first_entry, [Tuple, ...]) in first-entry order
    pending: list  # [Tuple, ...] in replay order

    def encode(self) -> bytes:
        parts = [_ST_HEAD.pack(self.group_id, self.global_depth, len(self.buckets))]
        for local_depth, first_entry, tuples in self.buckets:
            parts.append(_ST_BUCKET.pack(local_depth, first_entry, len(tuples)))
        for _, _, tuples in self.buckets:
            parts.extend(encode_tuple(t) for t in tuples)
        parts.append(_U32.pack(len(self.pending)))
        parts.extend(encode_tuple(t) for t in self.pending)
        return b"".join(parts)

    @classmethod
    def decode(cls, payload: bytes) -> "StateTransfer":
        group_id, depth, n_buckets = _ST_HEAD.unpack_from(payload, 0)
        off = _ST_HEAD.size
        metas = []
        for _ in range(n_buckets):
            metas.append(_ST_BUCKET.unpack_from(payload, off))
            off += _ST_BUCKET.size
        buckets = []
        for local_depth, first_entry, count in metas:
            tuples = [decode_tuple(payload, off + i * TUPLE_BYTES) for i in range(count)]
            off += count * TUPLE_BYTES
            buckets.append((local_depth, first_entry, tuples))
        (n_pending,) = _U32.unpack_from(payload, off)
        off += _U32.size
        pending = [decode_tuple(payload, off + i * TUPLE_BYTES) for i in range(n_pending)]
        return cls(group_id, depth, buckets, pending)


# -- join result records (slave -> collector) ----------------------------------

_RESULT = struct.Struct("<IQQQQQ")  # key, ts1, ts2, emit_ns, id1, id2


def encode_results(results) -> bytes:
    return b"".join(_RESULT.pack(r.key, r.ts1, r.ts2, r.emit_ns, r.id1, r.id2) for r in results)


def decode_results(payload: bytes):
    from .metrics import JoinResult

    out = []
    for off in range(0, len(payload), _RESULT.size):
        out.append(JoinResult(*_RESULT.unpack_from(payload, off)))
    return out


# -- small control payloads -----------------------------------------------------

_MOVE = struct.Struct("<IH")
_F64 = struct.Struct("<d")
_U64 = struct.Struct("<Q")


def encode_move(group_id: int, peer: int) -> bytes:
    return _MOVE.pack(group_id, peer)


def decode_move(payload: bytes) -> tuple[int, int]:
    return _MOVE.unpack(payload)


def encode_load(f: float) -> bytes:
    return _F64.pack(f)


def decode_load(payload: bytes) -> float:
    return _F64.unpack(payload)[0]


def encode_u32(v: int) -> bytes:
    return _U32.pack(v)


def decode_u32(payload: bytes) -> int:
    return _U32.unpack(payload)[0]


def encode_u64(v: int) -> bytes:
    return _U64.pack(v)


def decode_u64(payload: bytes) -> int:
    return _U64.unpack(payload)[0]
