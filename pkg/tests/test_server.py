import logging
import random
import threading

import pytest

from smartprobe import engine, netsim, wire
from smartprobe.core import NetworkTechnology, ProbeParameters
from smartprobe.server import BcesServer
from smartprobe.transport import UdpEndpoint, run_process

AG = NetworkTechnology.named("WIFI_AG")


def star(n, **kw):
    w = netsim.build_world(netsim.star_topology(n, **kw))
    srv = BcesServer(w.endpoint("server"), **kw.get("server", {}))
    w.spawn("server", srv.process())
    return w, srv


def start_clients(w, n, seed=0):
    return [w.spawn(f"c{i}", engine.path_measurement(w.endpoint(f"c{i}"), "server", AG,
                                                     rng=random.Random(seed * 100 + i)))
            for i in range(n)]


def test_empty_status():
    w, srv = star(1)
    st = srv.status()
    assert st.sessions == 0 and st.queue_depths == {} and st.grants == 0 and st.holder is None


def test_status_during_three_clients():
    w, srv = star(3)
    procs = start_clients(w, 3)
    w.run_until(lambda: srv.status().sessions == 3, max_time=5)
    st = srv.status()
    assert st.sessions == 3 and len(st.queue_depths) == 3
    w.run_until(lambda: all(p.done for p in procs))
    w.run_for(1.0)
    assert srv.status().sessions == 0
    assert srv.status().grants >= 3 * 2 * 60
    assert srv.status().grants_per_second > 0


def test_concurrent_trains_never_overlap():
    w, srv = star(2)
    procs = start_clients(w, 2, seed=1)
    w.run_until(lambda: all(p.done for p in procs))
    for link in ("srv_down", "srv_up"):
        occ = w.link_occupancy_report(link)
        assert len({iv.session_id for iv in occ}) == 2
        assert netsim.overlapping_trains(occ) == []
    for p in procs:
        assert p.result.downlink.capacity_bps == pytest.approx(10e6, rel=0.02)
        assert p.result.uplink.capacity_bps == pytest.approx(10e6, rel=0.02)


def test_ten_sequential_clients():
    w = netsim.build_world(netsim.two_host_topology(6e6, seed=2))
    srv = BcesServer(w.endpoint("server"))
    w.spawn("server", srv.process())
    cli = w.endpoint("client")
    rng = random.Random(5)
    for _ in range(10):
        pm = engine.measure_path(AG, "server", cli, rng=rng)
        assert pm.downlink.capacity_bps == pytest.approx(6e6, rel=0.02)
        assert pm.uplink.capacity_bps == pytest.approx(6e6, rel=0.02)
    assert sum(1 for r in srv.results if r[2] == "down") == 10


def test_unknown_and_malformed_datagrams_counted():
    w, srv = star(1)
    c = w.endpoint("c0")
    c.send(b"garbage", "server")
    c.send(wire.encode_control(wire.ControlMessage(wire.Kind.RTS, 1234, 0, 5)), "server")
    c.send(wire.encode_probe(wire.ProbePacket(99, 0, 0), 100), "server")
    w.run_for(1.0)
    assert srv.dropped["malformed"] == 1
    assert srv.dropped["unknown_session"] == 2
    assert not w.endpoint("server").process.done


def test_vanished_client_expires():
    w, srv = star(1)
    c = w.endpoint("c0")
    c.send(wire.encode_control(wire.ControlMessage(wire.Kind.START, 42, 0, 46, 54_000_000)), "server")
    c.send(wire.encode_control(wire.ControlMessage(wire.Kind.RTS, 42, 0, 46)), "server")
    w.run_for(1.0)
    assert srv.status().sessions == 1
    w.run_for(58.0)
    assert srv.status().sessions == 1
    w.run_for(2.0)
    assert srv.status().sessions == 0 and srv.holder is None
    assert len(srv.scheduler) == 0


def test_abort_when_full():
    w, srv = star(1)
    srv.max_sessions = 1
    c = w.endpoint("c0")
    for sid in (1, 2):
        c.send(wire.encode_control(wire.ControlMessage(wire.Kind.START, sid, 0, 46, 54_000_000)), "server")
    w.run_for(1.0)
    kinds = [(m.session_id, m.kind) for m in (wire.decode(d) for d, _, _ in c.inbox)]
    assert kinds == [(1, wire.Kind.ACK), (2, wire.Kind.ABORT)]
    assert srv.dropped["refused"] == 1


def test_repeated_start_gets_same_ack():
    w, srv = star(1)
    c = w.endpoint("c0")
    start = wire.encode_control(wire.ControlMessage(wire.Kind.START, 3, 0, 3, 1_800_000))
    c.send(start, "server")
    c.send(start, "server")
    w.run_for(1.0)
    acks = [wire.decode(d) for d, _, _ in c.inbox]
    assert len(acks) == 2 and acks[0].k == acks[1].k == 376
    assert acks[0].nominal_capacity_bps == 450_000_000
    assert srv.status().sessions == 1


def test_structured_log(caplog):
    w, srv = star(1)
    with caplog.at_level(logging.INFO, logger="smartprobe.server"):
        procs = start_clients(w, 1)
        w.run_until(lambda: procs[0].done)
    lines = [r.getMessage() for r in caplog.records]
    assert any("event=start" in ln for ln in lines)
    assert any("event=train k=46 train=0" in ln for ln in lines)
    assert any("event=estimate" in ln for ln in lines)
    assert all(ln.startswith("t=") and " session=" in ln for ln in lines)


def test_over_real_udp():
    params = ProbeParameters(trains_per_campaign=5)
    ep = UdpEndpoint(("127.0.0.1", 0))
    srv = BcesServer(ep, params=params)
    t = threading.Thread(target=run_process, args=(srv.process(), ep), daemon=True)
    t.start()
    cli = UdpEndpoint(("127.0.0.1", 0))
    try:
        pm = engine.measure_path(AG, ep.address, cli, params, random.Random(1))
    finally:
        srv.stop()
        cli.send(b"wake", ep.address)
        t.join(5)
        cli.close()
        ep.close()
    assert not t.is_alive()
    assert pm.downlink.trains_received == 5 and pm.downlink.capacity_bps > 0
    assert pm.uplink.capacity_bps > 0
