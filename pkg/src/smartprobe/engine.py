"""Estimator and Prober state machines.

Both roles are generators over the coroutine protocol in ``transport``; the
``run_*`` helpers drive them on a blocking endpoint.  The Estimator asks for
n trains of k back-to-back packets, keeps the train with the smallest delay
sum and halves k after repeated failures.
"""

from __future__ import annotations

import enum
import logging
import math
import random
import statistics
from dataclasses import dataclass, field
from typing import Hashable, Optional

from . import wire
from .core import (CapacityEstimate, DomainError, NetworkTechnology, ProbeParameters,
                   TrainObservation, capacity_from_dispersion, delay_sum,
                   halved_train_length, initial_train_length, refined_dispersion)
from .transport import DatagramEndpoint, Grant, Recv, Release, run_process

log = logging.getLogger(__name__)

DEFAULT_RTT = 0.020
STALL_GAP_FACTOR = 16


class MeasurementError(Exception):
    pass


class Unreachable(MeasurementError):
    """The path never delivered a usable train."""


class HandshakeTimeout(Unreachable):
    pass


class IdleTimeout(Unreachable):
    pass


class PeerAborted(Unreachable):
    pass


class Role(enum.IntEnum):
    ESTIMATOR = 0
    PROBER = 1


@dataclass(frozen=True)
class Negotiation:
    k: int
    k_local: int
    k_remote: int
    local_capacity: float
    remote_capacity: float
    rtt: Optional[float] = None

    @property
    def slowest_capacity(self) -> float:
        return min(self.local_capacity, self.remote_capacity)


def negotiate(local: NetworkTechnology, remote_capacity_bps: float,
              params: ProbeParameters = ProbeParameters(), rtt: Optional[float] = None) -> Negotiation:
    """Both sides size k from their own technology; the smaller one wins."""
    k_local = initial_train_length(local, params)
    k_remote = initial_train_length(NetworkTechnology.other(remote_capacity_bps), params)
    return Negotiation(min(k_local, k_remote), k_local, k_remote,
                       float(local.nominal_capacity), float(remote_capacity_bps), rtt)


@dataclass
class MeasurementSession:
    session_id: int
    role: Role
    params: ProbeParameters
    k_current: int
    slowest_capacity: float
    rtt: Optional[float] = None
    train_counter: int = 0          # i, within the current k level
    failed: int = 0
    t_first_min: float = math.inf
    d_min: float = math.inf
    s_min: float = math.inf
    chosen: Optional[int] = None
    observations: list = field(default_factory=list)
    per_train: list = field(default_factory=list)
    restarts: int = 0
    floor_attempts: int = 0
    k_history: list = field(default_factory=list)
    wire_train: int = 0             # session-wide train counter put on the wire
    max_t_last: float = 0.0
    max_t_first: float = 0.0        # includes trains that never completed
    spacing: Optional[float] = None
    trains_failed: int = 0
    min_dispersion: float = 1e-9    # below this a dispersion is clock noise

    @classmethod
    def from_negotiation(cls, session_id: int, role: Role, neg: Negotiation,
                         params: ProbeParameters = ProbeParameters()) -> "MeasurementSession":
        return cls(session_id, role, params, neg.k, neg.slowest_capacity, neg.rtt)

    def reset_level(self):
        self.train_counter = 0
        self.failed = 0
        self.t_first_min = math.inf
        self.d_min = math.inf
        self.s_min = math.inf
        self.chosen = None
        self.observations = []
        self.per_train = []
        self.k_history.append(self.k_current)

    def operation_cost(self) -> float:
        rtt = self.rtt
        if rtt is None:
            rtt = self.t_first_min if math.isfinite(self.t_first_min) else DEFAULT_RTT
        return rtt + self.k_current * self.params.packet_size * 8 / self.slowest_capacity

    def train_timeout(self) -> float:
        p = self.params
        rtt = self.rtt or 0.0
        nominal = self.k_current * p.packet_size * 8 / self.slowest_capacity
        if self.max_t_last > 0:
            # evidence from completed trains on this path
            return max(p.learned_timeout_floor, 4 * rtt + 8 * self.max_t_last)
        if self.max_t_first > 0:
            # probes have crossed the path, though no train was complete yet
            return max(p.learned_timeout_floor, 4 * rtt + 8 * (self.max_t_first + nominal))
        return max(p.train_timeout_floor, 4 * rtt + nominal)

    def record(self, obs: TrainObservation) -> float:
        """Fold one complete train into the running minimum; returns its capacity."""
        t1min = min(self.t_first_min, obs.t_first)
        d = refined_dispersion(obs, t1min)
        if d < self.min_dispersion:
            raise DomainError(f"dispersion {d!r} below clock resolution")
        cap = capacity_from_dispersion(obs.k_used, self.params.packet_size, d)
        s = delay_sum(obs)
        self.t_first_min = t1min
        if s < self.s_min:
            self.s_min, self.d_min, self.chosen = s, d, obs.train_index
        self.observations.append(obs)
        self.per_train.append((obs.train_index, cap))
        self.max_t_last = max(self.max_t_last, obs.t_last)
        self.spacing = d / (obs.k_used - 1)
        self.failed = 0
        self.train_counter += 1
        return cap

    def fail(self) -> bool:
        """Count a failed train; True when the level was restarted."""
        self.failed += 1
        self.trains_failed += 1
        if self.failed < self.params.max_consecutive_failures:
            return False
        if self.k_current <= self.params.min_train_length:
            self.floor_attempts += 1
            if self.floor_attempts >= self.params.max_restarts_at_floor:
                raise Unreachable(
                    f"no campaign completed after {self.floor_attempts} attempts at k={self.k_current}")
        self.k_current = halved_train_length(self.k_current, self.params.min_train_length)
        self.restarts += 1
        self.reset_level()
        return True

    def estimate(self) -> CapacityEstimate:
        cap = capacity_from_dispersion(self.k_current, self.params.packet_size, self.d_min)
        return CapacityEstimate(cap, self.chosen, self.s_min, self.d_min, tuple(self.per_train),
                                self.k_current, len(self.per_train), self.restarts,
                                tuple(self.observations))


@dataclass
class ProberResult:
    trains_sent: int
    remote_estimate: Optional[CapacityEstimate]


@dataclass
class PathMeasurement:
    downlink: Optional[CapacityEstimate]
    uplink: Optional[CapacityEstimate]
    negotiated_k_initial: Optional[int]
    technologies: tuple
    started: float
    finished: float
    downlink_error: Optional[str] = None
    uplink_error: Optional[str] = None
    switched: Optional[float] = None        # when the downlink phase ended

    def __post_init__(self):
        if (self.downlink is None) == (self.downlink_error is None):
            raise ValueError("downlink needs exactly one of an estimate or an error")
        if (self.uplink is None) == (self.uplink_error is None):
            raise ValueError("uplink needs exactly one of an estimate or an error")


def _control(endpoint, peer, kind, sid, train=0, k=0, cap=0):
    ts = int(endpoint.now() * 1e6) & wire.U64
    endpoint.send(wire.encode_control(wire.ControlMessage(kind, sid, train, k, int(cap), ts)), peer)


def _session_control(data: bytes, sid: int) -> Optional[wire.ControlMessage]:
    try:
        msg = wire.decode_control(data)
    except wire.WireError:
        return None
    return msg if msg.session_id == sid else None


# handshake ---------------------------------------------------------------------

def handshake(endpoint: DatagramEndpoint, peer: Hashable, session_id: int,
              tech: NetworkTechnology, role: Role,
              params: ProbeParameters = ProbeParameters()):
    """Send START until ACKed.  ``role`` is the role the initiator takes."""
    k_local = initial_train_length(tech, params)
    for _ in range(params.handshake_attempts):
        t0 = endpoint.now()
        _control(endpoint, peer, wire.Kind.START, session_id, int(role), k_local, tech.nominal_capacity)
        deadline = t0 + params.handshake_timeout
        while True:
            item = yield Recv(deadline)
            if item is None:
                break
            msg = _session_control(item[0], session_id)
            if msg is None:
                continue
            if msg.kind is wire.Kind.ABORT:
                raise PeerAborted("peer refused the session")
            if msg.kind is wire.Kind.ACK and msg.nominal_capacity_bps > 0:
                return negotiate(tech, msg.nominal_capacity_bps, params, rtt=item[2] - t0)
    raise HandshakeTimeout(f"no ACK after {params.handshake_attempts} START attempts")


# estimator ---------------------------------------------------------------------

def _collect_train(endpoint, peer, session: MeasurementSession):
    """Request one train; return (t_first, t_last) relative to the RTS or None."""
    yield Grant(session.operation_cost())
    got = yield from _await_train(endpoint, peer, session)
    yield Release()
    return got


def _await_train(endpoint, peer, session: MeasurementSession):
    p = session.params
    k = session.k_current
    wire_train = session.wire_train
    session.wire_train = (session.wire_train + 1) & wire.U16
    t_rts = endpoint.now()
    _control(endpoint, peer, wire.Kind.RTS, session.session_id, wire_train, k)
    hard_deadline = t_rts + session.train_timeout()
    seen = set()
    t_first = None
    arrivals = []
    last_index_at = None
    while True:
        # a train is given up early once its tail has evidently been lost
        deadline = hard_deadline
        if last_index_at is not None:
            deadline = min(deadline, last_index_at + p.reorder_grace)
        if arrivals:
            if len(arrivals) >= 2:
                gap = statistics.median(b - a for a, b in zip(arrivals, arrivals[1:]))
            else:
                gap = session.spacing
            if gap is not None:
                deadline = min(deadline, arrivals[-1] + max(p.reorder_grace, STALL_GAP_FACTOR * gap))
        item = yield Recv(deadline)
        if item is None:
            if endpoint.now() >= deadline:
                return None
            continue
        data, _, t = item
        if len(data) >= wire.PROBE_HEADER_SIZE and data[3] == wire.Kind.PROBE:
            try:
                pkt = wire.decode_probe(data)
            except wire.WireError:
                continue
            if (pkt.session_id != session.session_id or pkt.train_index != wire_train
                    or pkt.packet_index >= k or pkt.packet_index in seen):
                continue    # stray, late or duplicate
            seen.add(pkt.packet_index)
            arrivals.append(t)
            if t_first is None:
                t_first = t - t_rts
                session.max_t_first = max(session.max_t_first, t_first)
            if pkt.packet_index == k - 1:
                last_index_at = t
            if len(seen) == k:
                return t_first, t - t_rts
            continue
        msg = _session_control(data, session.session_id)
        if msg is not None and msg.kind is wire.Kind.ABORT:
            raise PeerAborted("peer aborted the session")


def estimator(endpoint: DatagramEndpoint, peer: Hashable, session: MeasurementSession):
    """Run a full campaign and return a CapacityEstimate (or raise Unreachable)."""
    n = session.params.trains_per_campaign
    sid = session.session_id
    if not session.k_history:
        session.reset_level()
    session.min_dispersion = max(session.min_dispersion, endpoint.granularity / 2)
    try:
        while session.train_counter < n:
            got = yield from _collect_train(endpoint, peer, session)
            obs = None
            if got is not None:
                try:
                    obs = TrainObservation(session.train_counter, session.k_current, *got)
                    session.record(obs)
                except (DomainError, ValueError):
                    obs = None      # clock anomaly: zero or negative timing
            if obs is None and session.fail():
                log.debug("session %016x restart with k=%d", sid, session.k_current)
    except Unreachable:
        _control(endpoint, peer, wire.Kind.ABORT, sid)
        raise
    est = session.estimate()
    _control(endpoint, peer, wire.Kind.END, sid, session.restarts & wire.U16,
             min(est.k_final, wire.U16), min(round(est.capacity_bps), wire.U64))
    return est


# prober ------------------------------------------------------------------------

def send_train(endpoint, peer, session_id: int, train_index: int, k: int, packet_size: int):
    endpoint.send_many([wire.encode_probe(wire.ProbePacket(session_id, train_index, j), packet_size)
                        for j in range(k)], peer)


def prober(endpoint: DatagramEndpoint, peer: Hashable, session_id: int,
           params: ProbeParameters = ProbeParameters()):
    """Answer RTS with trains until END; END carries the remote estimate."""
    sent = 0
    last = endpoint.now()
    while True:
        item = yield Recv(last + params.prober_idle_timeout)
        if item is None:
            if endpoint.now() < last + params.prober_idle_timeout:
                continue
            _control(endpoint, peer, wire.Kind.ABORT, session_id)
            raise IdleTimeout(f"no request for {params.prober_idle_timeout:g} s")
        msg = _session_control(item[0], session_id)
        if msg is None:
            continue
        last = endpoint.now()
        if msg.kind is wire.Kind.RTS:
            send_train(endpoint, peer, session_id, msg.train_index, msg.k, params.packet_size)
            sent += 1
        elif msg.kind is wire.Kind.END:
            remote = None
            if msg.nominal_capacity_bps > 0 and msg.k >= 2:
                remote = CapacityEstimate.from_remote(float(msg.nominal_capacity_bps), msg.k,
                                                      msg.train_index, params.packet_size)
            return ProberResult(sent, remote)
        elif msg.kind is wire.Kind.ABORT:
            raise PeerAborted("peer aborted the session")


# both directions -----------------------------------------------------------------

def _describe(exc: Exception) -> str:
    kind = "Unreachable" if isinstance(exc, Unreachable) else type(exc).__name__
    return f"{kind}: {exc}"


def path_measurement(endpoint: DatagramEndpoint, peer: Hashable, tech: NetworkTechnology,
                     params: ProbeParameters = ProbeParameters(),
                     rng: Optional[random.Random] = None, sessions: Optional[list] = None):
    """Downlink (local Estimator) then uplink (local Prober), fresh session ids."""
    rng = rng or random.Random()
    started = endpoint.now()
    down = up = None
    down_err = up_err = None
    k0 = None
    remote_tech = None

    sid = rng.getrandbits(64)
    try:
        neg = yield from handshake(endpoint, peer, sid, tech, Role.ESTIMATOR, params)
        k0 = neg.k
        remote_tech = NetworkTechnology.other(neg.remote_capacity)
        session = MeasurementSession.from_negotiation(sid, Role.ESTIMATOR, neg, params)
        if sessions is not None:
            sessions.append(session)
        down = yield from estimator(endpoint, peer, session)
    except MeasurementError as exc:
        down_err = _describe(exc)

    switched = endpoint.now()
    sid = rng.getrandbits(64)
    try:
        neg = yield from handshake(endpoint, peer, sid, tech, Role.PROBER, params)
        k0 = neg.k if k0 is None else k0
        remote_tech = remote_tech or NetworkTechnology.other(neg.remote_capacity)
        result = yield from prober(endpoint, peer, sid, params)
        if result.remote_estimate is None:
            raise Unreachable("peer reported no estimate")
        up = result.remote_estimate
    except MeasurementError as exc:
        up_err = _describe(exc)

    return PathMeasurement(down, up, k0, (tech, remote_tech), started, endpoint.now(),
                           down_err, up_err, switched)


def run_estimator(session: MeasurementSession, endpoint: DatagramEndpoint, peer) -> CapacityEstimate:
    return run_process(estimator(endpoint, peer, session), endpoint)


def run_prober(session_id: int, endpoint: DatagramEndpoint, peer,
               params: ProbeParameters = ProbeParameters()) -> ProberResult:
    return run_process(prober(endpoint, peer, session_id, params), endpoint)


def measure_path(tech: NetworkTechnology, peer, endpoint: DatagramEndpoint,
                 params: ProbeParameters = ProbeParameters(),
                 rng: Optional[random.Random] = None, sessions: Optional[list] = None) -> PathMeasurement:
    return run_process(path_measurement(endpoint, peer, tech, params, rng, sessions), endpoint)
