import pytest
from hypothesis import given
from hypothesis import strategies as st

from smartprobe import wire
from smartprobe.wire import ControlMessage, Kind, ProbePacket

u16 = st.integers(0, 0xFFFF)
u64 = st.integers(0, 2**64 - 1)
control_kinds = st.sampled_from([k for k in Kind if k is not Kind.PROBE])


@st.composite
def controls(draw):
    kind = draw(control_kinds)
    k = draw(st.integers(2, 0xFFFF)) if kind is Kind.RTS else draw(u16)
    return ControlMessage(kind, draw(u64), draw(u16), k, draw(u64), draw(u64))


def test_start_layout():
    data = wire.encode_control(ControlMessage(Kind.START, 1, 0, 46, 54_000_000))
    assert len(data) == wire.CONTROL_SIZE == 32
    assert data[:4] == bytes([0x53, 0x50, 0x01, 0x01])
    assert data[4:12] == (1).to_bytes(8, "big")
    assert data[14:16] == (46).to_bytes(2, "big")
    assert data[16:24] == (54_000_000).to_bytes(8, "big")


@given(controls())
def test_control_round_trip(msg):
    data = wire.encode_control(msg)
    assert len(data) == 32
    assert wire.decode_control(data) == msg
    assert wire.decode(data) == msg


def test_rts_needs_two_packets():
    with pytest.raises(wire.InvalidMessage):
        wire.encode_control(ControlMessage(Kind.RTS, 1, 0, 1))


def test_out_of_range_refused():
    with pytest.raises(wire.InvalidMessage):
        wire.encode_control(ControlMessage(Kind.START, 2**64, 0, 2))
    with pytest.raises(wire.InvalidMessage):
        wire.encode_control(ControlMessage(Kind.PROBE, 1))


def test_decode_errors_name_fields():
    good = wire.encode_control(ControlMessage(Kind.RTS, 9, 3, 46))
    with pytest.raises(wire.Truncated) as exc:
        wire.decode_control(good[:30])
    assert exc.value.field == "length"
    with pytest.raises(wire.BadMagic):
        wire.decode_control(b"XX" + good[2:])
    with pytest.raises(wire.BadVersion):
        wire.decode_control(good[:2] + b"\x02" + good[3:])
    with pytest.raises(wire.BadKind):
        wire.decode_control(good[:3] + b"\x09" + good[4:])
    with pytest.raises(wire.BadKind):
        wire.decode_control(good[:3] + b"\x06" + good[4:])
    msg = wire.decode_control(good)
    assert msg.kind is Kind.RTS and msg.k == 46 and msg.train_index == 3


@given(controls(), st.data())
def test_every_truncation_is_rejected(msg, data):
    raw = wire.encode_control(msg)
    cut = data.draw(st.integers(0, len(raw) - 1))
    with pytest.raises(wire.Truncated):
        wire.decode_control(raw[:cut])


@given(st.binary(max_size=64))
def test_garbage_never_crashes(raw):
    try:
        wire.decode(raw)
    except wire.WireError:
        pass


@given(u64, u16, u16, st.integers(16, 1500))
def test_probe_round_trip(sid, train, idx, size):
    pkt = ProbePacket(sid, train, idx)
    data = wire.encode_probe(pkt, size)
    assert len(data) == size
    assert wire.decode_probe(data) == pkt
    assert wire.decode(data) == pkt
    assert data[16:] == bytes(size - 16)


def test_probe_size_precondition():
    with pytest.raises(wire.InvalidMessage):
        wire.encode_probe(ProbePacket(1, 0, 0), 15)
    assert len(wire.encode_probe(ProbePacket(1, 0, 0), 1500)) == 1500


def test_probe_decode_errors():
    data = wire.encode_probe(ProbePacket(1, 2, 3), 100)
    with pytest.raises(wire.Truncated):
        wire.decode_probe(data[:15])
    with pytest.raises(wire.BadMagic):
        wire.decode_probe(b"ZZ" + data[2:])


def test_peek_session():
    data = wire.encode_probe(ProbePacket(77, 0, 0), 64)
    assert wire.peek_session(data) == (Kind.PROBE, 77)
    assert wire.peek_session(b"junk") is None
