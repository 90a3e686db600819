"""Datagram layouts for the measurement protocol.

All integers are big-endian.  Control datagrams are 32 bytes:

    magic "SP" | version 0x01 | kind | session_id u64 | train_index u16 |
    k u16 | nominal_capacity_bps u64 | sender_timestamp_us u64

Probe datagrams carry a 16-byte header (magic, version, kind 0x06,
session_id, train_index, packet_index) and are zero-padded to P bytes.
See docs/protocol.md for field semantics per message kind.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

MAGIC = b"SP"
VERSION = 0x01

_CONTROL = struct.Struct("!2sBBQHHQQ")
_PROBE = struct.Struct("!2sBBQHH")
CONTROL_SIZE = _CONTROL.size
PROBE_HEADER_SIZE = _PROBE.size

U16 = 0xFFFF
U64 = 0xFFFF_FFFF_FFFF_FFFF


class Kind(enum.IntEnum):
    START = 0x01
    ACK = 0x02
    RTS = 0x03
    END = 0x04
    ABORT = 0x05
    PROBE = 0x06


CONTROL_KINDS = frozenset(k for k in Kind if k is not Kind.PROBE)


class WireError(ValueError):
    def __init__(self, field: str, detail: str = ""):
        self.field = field
        super().__init__(f"{field}: {detail}" if detail else field)


class Truncated(WireError):
    pass


class BadMagic(WireError):
    pass


class BadVersion(WireError):
    pass


class BadKind(WireError):
    pass


class InvalidMessage(ValueError):
    """A message that must not be encoded."""


@dataclass(frozen=True)
class ControlMessage:
    kind: Kind
    session_id: int
    train_index: int = 0
    k: int = 0
    nominal_capacity_bps: int = 0
    sender_timestamp_us: int = 0

    def validate(self):
        if self.kind not in CONTROL_KINDS:
            raise InvalidMessage(f"{self.kind!r} is not a control kind")
        for name, limit in (("session_id", U64), ("train_index", U16), ("k", U16),
                            ("nominal_capacity_bps", U64), ("sender_timestamp_us", U64)):
            value = getattr(self, name)
            if not 0 <= value <= limit:
                raise InvalidMessage(f"{name}={value} out of range")
        if self.kind is Kind.RTS and self.k < 2:
            raise InvalidMessage(f"RTS needs k >= 2, got {self.k}")


@dataclass(frozen=True)
class ProbePacket:
    session_id: int
    train_index: int
    packet_index: int


def encode_control(msg: ControlMessage) -> bytes:
    msg.validate()
    return _CONTROL.pack(MAGIC, VERSION, int(msg.kind), msg.session_id, msg.train_index,
                         msg.k, msg.nominal_capacity_bps, msg.sender_timestamp_us)


def _check_header(data: bytes, size: int):
    if len(data) < 2:
        raise Truncated("magic", f"{len(data)} bytes")
    if data[:2] != MAGIC:
        raise BadMagic("magic", data[:2].hex())
    if len(data) < 3:
        raise Truncated("version")
    if data[2] != VERSION:
        raise BadVersion("version", str(data[2]))
    if len(data) < 4:
        raise Truncated("kind")
    if len(data) < size:
        raise Truncated("length", f"{len(data)} < {size}")


def decode_control(data: bytes) -> ControlMessage:
    _check_header(data, 4)
    try:
        kind = Kind(data[3])
    except ValueError:
        raise BadKind("kind", hex(data[3])) from None
    if kind not in CONTROL_KINDS:
        raise BadKind("kind", f"{kind.name} is not a control message")
    if len(data) < CONTROL_SIZE:
        raise Truncated("length", f"{len(data)} < {CONTROL_SIZE}")
    _, _, _, sid, train, k, cap, ts = _CONTROL.unpack_from(data)
    return ControlMessage(kind, sid, train, k, cap, ts)


def encode_probe(pkt: ProbePacket, packet_size: int) -> bytes:
    if packet_size < PROBE_HEADER_SIZE:
        raise InvalidMessage(f"packet size {packet_size} < header {PROBE_HEADER_SIZE}")
    if not (0 <= pkt.session_id <= U64 and 0 <= pkt.train_index <= U16
            and 0 <= pkt.packet_index <= U16):
        raise InvalidMessage(f"probe field out of range: {pkt}")
    header = _PROBE.pack(MAGIC, VERSION, int(Kind.PROBE), pkt.session_id,
                         pkt.train_index, pkt.packet_index)
    return header + bytes(packet_size - PROBE_HEADER_SIZE)


def decode_probe(data: bytes) -> ProbePacket:
    _check_header(data, 4)
    if data[3] != Kind.PROBE:
        raise BadKind("kind", hex(data[3]))
    if len(data) < PROBE_HEADER_SIZE:
        raise Truncated("length", f"{len(data)} < {PROBE_HEADER_SIZE}")
    _, _, _, sid, train, idx = _PROBE.unpack_from(data)
    return ProbePacket(sid, train, idx)


def decode(data: bytes) -> ControlMessage | ProbePacket:
    """Decode any protocol datagram, dispatching on the kind byte."""
    _check_header(data, 4)
    if data[3] == Kind.PROBE:
        return decode_probe(data)
    return decode_control(data)


def peek_session(data: bytes) -> tuple[int, int] | None:
    """(kind, session_id) without full validation; None for foreign datagrams."""
    if len(data) >= 12 and data[:2] == MAGIC:
        return data[3], int.from_bytes(data[4:12], "big")
    return None
