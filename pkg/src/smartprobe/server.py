"""Bottleneck capacity estimation server.

One UDP port, sessions demultiplexed by session_id.  For a downlink session
the server is the Prober; for an uplink session it runs the Estimator.  Every
train exchange is one scheduler operation, and only the session holding the
grant may have a train on the link.
"""

from __future__ import annotations

import collections
import logging
import math
from dataclasses import dataclass, field
from typing import Hashable, Optional

from . import wire
from .core import NetworkTechnology, ProbeParameters, initial_train_length
from .engine import (DEFAULT_RTT, MeasurementError, MeasurementSession, Role, _control,
                     estimator, negotiate, send_train)
from .scheduler import Idle, OperationCost, SchedulerConfig, make_scheduler
from .transport import Grant, Recv, Release, UdpEndpoint, run_process

log = logging.getLogger(__name__)

END_COPIES = 3


@dataclass
class SessionEntry:
    session_id: int
    peer: Hashable
    role: Role                      # the server's role in this session
    client_tech: NetworkTechnology
    k: int
    created: float
    last_activity: float
    ack_sent_at: float
    rtt: Optional[float] = None
    pending_rts: Optional[tuple] = None     # (train_index, k) awaiting a grant
    queued: bool = False
    gen: object = None
    session: Optional[MeasurementSession] = None
    waiting_until: Optional[float] = None
    waiting: bool = False
    trains: int = 0


@dataclass
class ServerStatus:
    sessions: int
    queue_depths: dict
    grants: int
    grants_per_second: float
    holder: Optional[int]
    dropped: dict = field(default_factory=dict)


class BcesServer:
    def __init__(self, endpoint, tech: NetworkTechnology = NetworkTechnology.named("WIFI_N"),
                 params: ProbeParameters = ProbeParameters(),
                 config: SchedulerConfig = SchedulerConfig(),
                 max_sessions: int = 64, session_expiry: float = 60.0):
        self.endpoint = endpoint
        self.tech = tech
        self.params = params
        self.config = config
        self.scheduler = make_scheduler(config)
        self.max_sessions = max_sessions
        self.session_expiry = session_expiry
        self.sessions: dict[int, SessionEntry] = {}
        self.holder: Optional[int] = None
        self.hold_until: Optional[float] = None
        self.grants = 0
        self.dropped = collections.Counter()
        self.results = collections.deque(maxlen=1000)
        self.started = endpoint.now()
        self._stopped = False

    # public ----------------------------------------------------------------
    def stop(self):
        self._stopped = True

    def status(self) -> ServerStatus:
        now = self.endpoint.now()
        uptime = now - self.started
        depths = {sid: int(e.queued) for sid, e in self.sessions.items()}
        return ServerStatus(len(self.sessions), depths, self.grants,
                            self.grants / uptime if uptime > 0 else 0.0,
                            self.holder, dict(self.dropped))

    def process(self):
        """Main loop as a protocol generator (runs over UDP or in the simulator)."""
        while not self._stopped:
            item = yield Recv(self._next_deadline())
            now = self.endpoint.now()
            if item is not None:
                self._on_datagram(*item)
            self._on_timers(now)
            self._pump()

    # internals -------------------------------------------------------------
    def _log(self, entry, event, k=0, train=0, **extra):
        if log.isEnabledFor(logging.INFO):
            more = "".join(f" {key}={val}" for key, val in extra.items())
            log.info("t=%.6f session=%016x event=%s k=%d train=%d%s",
                     self.endpoint.now(), entry.session_id, event, k, train, more)

    def _next_deadline(self):
        times = []
        if self.hold_until is not None:
            times.append(self.hold_until)
        for e in self.sessions.values():
            times.append(e.last_activity + self.session_expiry)
            if e.waiting and e.waiting_until is not None:
                times.append(e.waiting_until)
        return min(times) if times else None

    def _on_datagram(self, data, peer, t):
        try:
            msg = wire.decode(data)
        except wire.WireError:
            self.dropped["malformed"] += 1
            return
        if isinstance(msg, wire.ControlMessage) and msg.kind is wire.Kind.START:
            self._on_start(msg, peer, t)
            return
        entry = self.sessions.get(msg.session_id)
        if entry is None or entry.peer != peer:
            self.dropped["unknown_session"] += 1
            return
        entry.last_activity = t
        if entry.role is Role.ESTIMATOR:
            if entry.waiting:
                self._advance(entry, (data, peer, t))
            else:
                self.dropped["unexpected"] += 1
            return
        if isinstance(msg, wire.ProbePacket):
            self.dropped["unexpected"] += 1
            return
        # downlink session: the client is the Estimator
        if self.holder == entry.session_id:
            self._release()
        if msg.kind is wire.Kind.RTS:
            if entry.rtt is None:
                entry.rtt = t - entry.ack_sent_at
            entry.pending_rts = (msg.train_index, msg.k)
            if not entry.queued:
                # a newer RTS replaces an unserved one; the client gave up on it
                self.scheduler.enqueue(entry.session_id, OperationCost(
                    entry.session_id, self._cost(entry, msg.k)))
                entry.queued = True
        elif msg.kind is wire.Kind.END:
            self._log(entry, "end", msg.k, msg.train_index, capacity=msg.nominal_capacity_bps)
            self.results.append((entry.session_id, entry.peer, "down", msg.nominal_capacity_bps or None))
            self._close(entry)
        elif msg.kind is wire.Kind.ABORT:
            self._log(entry, "abort")
            self._close(entry)

    def _cost(self, entry, k):
        rtt = entry.rtt if entry.rtt is not None else DEFAULT_RTT
        return rtt + k * self.params.packet_size * 8 / entry.client_tech.nominal_capacity

    def _on_start(self, msg, peer, t):
        sid = msg.session_id
        existing = self.sessions.get(sid)
        if existing is not None:
            if existing.peer == peer:       # our ACK was lost
                _control(self.endpoint, peer, wire.Kind.ACK, sid, 0,
                         initial_train_length(self.tech, self.params), self.tech.nominal_capacity)
            else:
                self.dropped["session_clash"] += 1
            return
        if len(self.sessions) >= self.max_sessions or msg.nominal_capacity_bps == 0 \
                or msg.train_index not in (Role.ESTIMATOR, Role.PROBER):
            _control(self.endpoint, peer, wire.Kind.ABORT, sid)
            self.dropped["refused"] += 1
            return
        neg = negotiate(self.tech, msg.nominal_capacity_bps, self.params)
        _control(self.endpoint, peer, wire.Kind.ACK, sid, 0, neg.k_local, self.tech.nominal_capacity)
        now = self.endpoint.now()
        role = Role.PROBER if msg.train_index == Role.ESTIMATOR else Role.ESTIMATOR
        entry = SessionEntry(sid, peer, role, NetworkTechnology.other(msg.nominal_capacity_bps),
                             neg.k, now, t, now)
        self.sessions[sid] = entry
        self._log(entry, "start", neg.k, role=role.name)
        if role is Role.ESTIMATOR:
            entry.session = MeasurementSession.from_negotiation(sid, Role.ESTIMATOR, neg, self.params)
            entry.gen = estimator(self.endpoint, peer, entry.session)
            self._advance(entry, None)

    def _advance(self, entry, value):
        entry.waiting = False
        while True:
            try:
                req = entry.gen.send(value)
            except StopIteration as stop:
                est = stop.value
                for _ in range(END_COPIES - 1):     # the generator sent the first
                    _control(self.endpoint, entry.peer, wire.Kind.END, entry.session_id,
                             est.restarts & wire.U16, est.k_final, round(est.capacity_bps))
                self._log(entry, "estimate", est.k_final, est.chosen_train_index,
                          capacity=round(est.capacity_bps))
                self.results.append((entry.session_id, entry.peer, "up", est))
                self._close(entry)
                return
            except MeasurementError as exc:
                self._log(entry, "failed", entry.session.k_current, reason=type(exc).__name__)
                self.results.append((entry.session_id, entry.peer, "up", exc))
                self._close(entry)
                return
            value = None
            if isinstance(req, Recv):
                entry.waiting = True
                entry.waiting_until = req.deadline
                return
            if isinstance(req, Grant):
                self.scheduler.enqueue(entry.session_id, OperationCost(entry.session_id, req.cost))
                entry.queued = True
                return
            if isinstance(req, Release):
                if self.holder == entry.session_id:
                    self._release()

    def _on_timers(self, now):
        if self.hold_until is not None and now >= self.hold_until:
            self._release()
        for entry in list(self.sessions.values()):
            if entry.session_id not in self.sessions:
                continue
            if now >= entry.last_activity + self.session_expiry:
                self._log(entry, "expired")
                if entry.gen is not None:
                    entry.gen.close()
                self._close(entry)
            elif entry.waiting and entry.waiting_until is not None and now >= entry.waiting_until:
                self._advance(entry, None)

    def _release(self):
        self.holder = None
        self.hold_until = None

    def _close(self, entry):
        self.sessions.pop(entry.session_id, None)
        self.scheduler.remove(entry.session_id)
        if self.holder == entry.session_id:
            self._release()

    def _pump(self):
        while self.holder is None:
            op = self.scheduler.next_grant()
            if op is Idle:
                return
            entry = self.sessions.get(op.client_id)
            if entry is None:
                continue
            entry.queued = False
            self.grants += 1
            self.holder = entry.session_id
            if entry.role is Role.PROBER:
                if entry.pending_rts is None:
                    self._release()
                    continue
                train, k = entry.pending_rts
                entry.pending_rts = None
                send_train(self.endpoint, entry.peer, entry.session_id, train, k,
                           self.params.packet_size)
                entry.trains += 1
                self._log(entry, "train", k, train)
                p = self.params
                rtt = entry.rtt or 0.0
                slowest = min(entry.client_tech.nominal_capacity, self.tech.nominal_capacity)
                self.hold_until = self.endpoint.now() + max(
                    p.train_timeout_floor, 4 * rtt + k * p.packet_size * 8 / slowest)
            else:
                self._advance(entry, None)


def serve(bind: tuple = ("0.0.0.0", 4960), config: SchedulerConfig = SchedulerConfig(),
          params: ProbeParameters = ProbeParameters(),
          tech: NetworkTechnology = NetworkTechnology.named("WIFI_N"), **kwargs):
    """Run a server on a real UDP socket until interrupted."""
    endpoint = UdpEndpoint(bind)
    server = BcesServer(endpoint, tech, params, config, **kwargs)
    log.info("listening on %s:%d policy=%s quantum=%.4f", *endpoint.address,
             config.policy.value, config.quantum)
    try:
        run_process(server.process(), endpoint)
    except KeyboardInterrupt:
        pass
    finally:
        endpoint.close()
    return server
