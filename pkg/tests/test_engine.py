import itertools
import math
import random

import pytest

from smartprobe import engine, netsim, wire
from smartprobe.core import (NetworkTechnology, ProbeParameters, campaign_traffic_bytes,
                             capacity_from_dispersion)
from smartprobe.engine import MeasurementSession, Role
from smartprobe.server import BcesServer
from smartprobe.transport import Recv

AG = NetworkTechnology.named("WIFI_AG")


def sim(down=5e6, up=None, server=True, server_tech=None, **kw):
    w = netsim.build_world(netsim.two_host_topology(down, up, **kw))
    srv = None
    if server:
        srv = BcesServer(w.endpoint("server"), **({"tech": server_tech} if server_tech else {}))
        w.spawn("server", srv.process())
    return w, srv, w.endpoint("client")


def downlink_session(cli, sid=1, tech=AG, params=ProbeParameters()):
    neg = engine.run_process(engine.handshake(cli, "server", sid, tech, Role.ESTIMATOR, params), cli)
    return neg, MeasurementSession.from_negotiation(sid, Role.ESTIMATOR, neg, params)


def flaky_prober(ep, sid, short_trains):
    """Answers RTS with one packet missing for the first ``short_trains`` requests."""
    served = 0
    while True:
        item = yield Recv(ep.now() + 60)
        if item is None:
            return served
        msg = wire.decode_control(item[0])
        if msg.kind is wire.Kind.END:
            return served
        if msg.kind is wire.Kind.RTS:
            k = msg.k - 1 if served < short_trains else msg.k
            engine.send_train(ep, "client", sid, msg.train_index, k, 1500)
            served += 1


class TestNegotiation:
    def test_smaller_k_wins(self):
        neg = engine.negotiate(NetworkTechnology.named("UMTS"), 450e6)
        assert (neg.k, neg.k_local, neg.k_remote) == (3, 3, 376)

    def test_equal(self):
        assert engine.negotiate(AG, 54e6).k == 46

    def test_handshake_against_server(self):
        _, _, cli = sim(server_tech=NetworkTechnology.named("WIFI_N"))
        neg, _ = downlink_session(cli, tech=NetworkTechnology.named("UMTS"))
        assert neg.k == 3 and neg.remote_capacity == 450e6
        assert neg.rtt == pytest.approx(0.0102, abs=1e-3)

    def test_handshake_timeout(self):
        _, _, cli = sim(server=False)
        with pytest.raises(engine.HandshakeTimeout):
            downlink_session(cli)
        assert cli.now() == pytest.approx(9.0)
        assert cli.world.stats["injected"] == 3

    def test_refused_session(self):
        w, srv, cli = sim()
        srv.max_sessions = 0
        with pytest.raises(engine.PeerAborted):
            downlink_session(cli)


class TestEstimator:
    def test_five_megabit_path(self):
        _, _, cli = sim(5e6)
        _, s = downlink_session(cli)
        est = engine.run_estimator(s, cli, "server")
        assert est.capacity_bps == pytest.approx(5e6, rel=0.02)
        assert len(est.per_train_capacities) == 60 == est.trains_received
        assert est.k_final == 46 and est.restarts == 0

    def test_result_matches_recomputation(self):
        _, _, cli = sim(5e6, cross_down=1.5e6, seed=7)
        _, s = downlink_session(cli)
        est = engine.run_estimator(s, cli, "server")
        obs = est.observations
        assert len(obs) == 60
        t1min = math.inf
        best = None
        for o in obs:
            t1min = min(t1min, o.t_first)
            d = o.t_last - t1min
            s_i = o.t_first + o.t_last
            if best is None or s_i < best[0]:
                best = (s_i, d, o.train_index)
        assert est.chosen_train_index == best[2]
        assert est.capacity_bps == pytest.approx(capacity_from_dispersion(46, 1500, best[1]), rel=1e-12)

    def test_probe_bytes_received(self):
        _, _, cli = sim(5e6)
        _, s = downlink_session(cli)
        engine.run_estimator(s, cli, "server")
        assert cli.received_bytes[wire.Kind.PROBE] == campaign_traffic_bytes(60, 46, 1500)

    def test_three_failures_halve_k(self):
        w = netsim.build_world(netsim.two_host_topology(5e6))
        srv_ep, cli = w.endpoint("server"), w.endpoint("client")
        w.spawn(srv_ep, flaky_prober(srv_ep, 5, 3))
        s = MeasurementSession(5, Role.ESTIMATOR, ProbeParameters(), 46, 54e6, rtt=0.01)
        est = engine.run_estimator(s, cli, "server")
        assert s.k_history == [46, 23]
        assert est.k_final == 23 and est.restarts == 1
        assert s.trains_failed == 3
        assert [o.train_index for o in est.observations] == list(range(60))
        assert est.capacity_bps == pytest.approx(5e6, rel=0.02)

    def test_two_failures_do_not_restart(self):
        w = netsim.build_world(netsim.two_host_topology(5e6))
        srv_ep, cli = w.endpoint("server"), w.endpoint("client")
        w.spawn(srv_ep, flaky_prober(srv_ep, 5, 2))
        s = MeasurementSession(5, Role.ESTIMATOR, ProbeParameters(), 46, 54e6, rtt=0.01)
        est = engine.run_estimator(s, cli, "server")
        assert est.restarts == 0 and s.trains_failed == 2

    def test_persistent_loss_halves_to_floor(self):
        w, _, cli = sim(5e6, seed=2)
        _, s = downlink_session(cli)
        w.links["down"].loss = 0.6
        with pytest.raises(engine.Unreachable):
            engine.run_estimator(s, cli, "server")
        assert s.k_history[:5] == [46, 23, 11, 5, 2]
        assert all(k == 2 for k in s.k_history[4:])

    def test_t_first_min_never_increases(self):
        _, _, cli = sim(5e6, cross_down=2e6, seed=3)
        _, s = downlink_session(cli)
        est = engine.run_estimator(s, cli, "server")
        running = list(itertools.accumulate((o.t_first for o in est.observations), min))
        assert running == sorted(running, reverse=True)
        assert s.t_first_min == running[-1]

    def test_train_timeout_values(self):
        s = MeasurementSession(1, Role.ESTIMATOR, ProbeParameters(), 46, 54e6, rtt=0.02)
        assert s.train_timeout() == 2.0
        s.max_t_first = 0.01
        assert s.train_timeout() == 0.5
        s.max_t_first = 0.1
        assert s.train_timeout() == pytest.approx(4 * 0.02 + 8 * (0.1 + 46 * 12000 / 54e6))
        s.max_t_last = 0.2
        assert s.train_timeout() == pytest.approx(4 * 0.02 + 8 * 0.2)


class TestProber:
    def _run(self, script, params=ProbeParameters()):
        w = netsim.build_world(netsim.two_host_topology(10e6))
        srv_ep, cli = w.endpoint("server"), w.endpoint("client")
        proc = w.spawn(srv_ep, engine.prober(srv_ep, "client", 7, params))
        for at, msg in script:
            w.schedule(netsim.to_ps(at), cli.send, wire.encode_control(msg), "server")
        w.run_until(lambda: proc.done, max_time=100)
        return proc, w, cli

    def test_rts_gets_k_probes(self):
        proc, w, cli = self._run([(0.1, wire.ControlMessage(wire.Kind.RTS, 7, 3, 46)),
                                  (1.0, wire.ControlMessage(wire.Kind.END, 7, 0, 46, 9_000_000))])
        got = [wire.decode(d) for d, _, _ in cli.inbox]
        assert [p.packet_index for p in got] == list(range(46))
        assert {p.train_index for p in got} == {3}
        assert cli.received_bytes[wire.Kind.PROBE] == 46 * 1500
        res = proc.result
        assert res.trains_sent == 1 and res.remote_estimate.capacity_bps == 9e6

    def test_duplicate_rts_fresh_train(self):
        proc, _, cli = self._run([(0.1, wire.ControlMessage(wire.Kind.RTS, 7, 7, 5)),
                                  (0.5, wire.ControlMessage(wire.Kind.RTS, 7, 7, 5)),
                                  (1.0, wire.ControlMessage(wire.Kind.END, 7))])
        idx = [wire.decode(d).packet_index for d, _, _ in cli.inbox]
        assert idx == list(range(5)) * 2
        assert proc.result.trains_sent == 2 and proc.result.remote_estimate is None

    def test_nothing_sent_after_end(self):
        proc, w, cli = self._run([(0.1, wire.ControlMessage(wire.Kind.END, 7)),
                                  (0.2, wire.ControlMessage(wire.Kind.RTS, 7, 1, 5))])
        w.run_for(1.0)
        assert proc.done and len(cli.inbox) == 0

    def test_idle_timeout_sends_abort(self):
        proc, w, cli = self._run([])
        w.run_until_idle()
        assert isinstance(proc.error, engine.IdleTimeout)
        assert proc.finished_at == pytest.approx(30.0)
        (data, _, _), = cli.inbox
        assert wire.decode(data).kind is wire.Kind.ABORT

    def test_other_sessions_ignored(self):
        proc, _, cli = self._run([(0.1, wire.ControlMessage(wire.Kind.RTS, 8, 0, 5)),
                                  (0.2, wire.ControlMessage(wire.Kind.END, 7))])
        assert proc.result.trains_sent == 0 and not cli.inbox


class TestPath:
    def test_symmetric(self):
        _, _, cli = sim(10e6)
        pm = engine.measure_path(AG, "server", cli, rng=random.Random(1))
        assert pm.downlink.capacity_bps == pytest.approx(10e6, rel=0.02)
        assert pm.uplink.capacity_bps == pytest.approx(10e6, rel=0.02)
        assert pm.negotiated_k_initial == 46

    def test_asymmetric(self):
        _, _, cli = sim(8e6, 2e6)
        pm = engine.measure_path(AG, "server", cli, rng=random.Random(2))
        assert pm.downlink.capacity_bps == pytest.approx(8e6, rel=0.02)
        assert pm.uplink.capacity_bps == pytest.approx(2e6, rel=0.02)

    def test_uplink_peer_crash(self):
        w, srv, cli = sim(10e6)
        proc = w.spawn(cli, engine.path_measurement(cli, "server", AG, rng=random.Random(3)))
        # let the uplink campaign start, then kill the server
        w.run_until(lambda: any(r[2] == "down" for r in srv.results) and srv.sessions)
        w.run_for(0.5)
        srv_proc = w.endpoint("server").process
        srv_proc.gen.close()
        srv_proc.done = True
        w.run_until(lambda: proc.done)
        pm = proc.result
        assert pm.downlink.capacity_bps == pytest.approx(10e6, rel=0.02)
        assert pm.uplink is None and pm.uplink_error.startswith("Unreachable")

    def test_unreachable_peer(self):
        _, _, cli = sim(server=False)
        pm = engine.measure_path(AG, "server", cli, rng=random.Random(4))
        assert pm.downlink is None and pm.uplink is None
        assert pm.downlink_error.startswith("Unreachable")

    def test_result_needs_estimate_or_error(self):
        with pytest.raises(ValueError):
            engine.PathMeasurement(None, None, 46, (AG, AG), 0.0, 1.0)
