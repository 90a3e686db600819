"""Deficit Round Robin over client measurement operations, plus an FCFS baseline.

Costs are seconds of server time: the round trip to the client plus the
time a train takes at the client's nominal capacity.
"""

from __future__ import annotations

import collections
import enum
import heapq
import io
import math
import random
import statistics
import threading
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Optional, Sequence

from .core import (NAMED_TECHNOLOGIES, NetworkTechnology, ProbeParameters,
                   initial_train_length)

RTT_MAX = 0.020


class DuplicateClient(Exception):
    pass


class Policy(str, enum.Enum):
    DRR = "DRR"
    FCFS = "FCFS"


@dataclass(frozen=True)
class OperationCost:
    client_id: Hashable
    cost: float

    def __post_init__(self):
        if not self.cost > 0:
            raise ValueError("operation cost must be > 0")

    @classmethod
    def for_train(cls, client_id, rtt: float, k: int, packet_size: int, capacity_bps: float):
        return cls(client_id, rtt + k * packet_size * 8 / capacity_bps)


def operation_cost(tech: NetworkTechnology, rtt: float,
                   params: ProbeParameters = ProbeParameters()) -> float:
    k = initial_train_length(tech, params)
    return rtt + k * params.packet_size * 8 / tech.nominal_capacity


def default_quantum(technologies: Iterable[NetworkTechnology] = NAMED_TECHNOLOGIES,
                    params: ProbeParameters = ProbeParameters(), rtt_max: float = RTT_MAX) -> float:
    """A third of the longest single operation any technology can need."""
    return max(operation_cost(t, rtt_max, params) for t in technologies) / 3


@dataclass(frozen=True)
class SchedulerConfig:
    quantum: float = field(default_factory=default_quantum)
    policy: Policy = Policy.DRR

    def __post_init__(self):
        if not self.quantum > 0:
            raise ValueError("quantum must be > 0")
        object.__setattr__(self, "policy", Policy(self.policy))


class _Idle:
    def __repr__(self):
        return "Idle"

    def __bool__(self):
        return False


Idle = _Idle()


@dataclass
class FlowQueue:
    client_id: Hashable
    pending: collections.deque = field(default_factory=collections.deque)
    deficit: float = 0.0


class DrrScheduler:
    def __init__(self, quantum: float):
        if not quantum > 0:
            raise ValueError("quantum must be > 0")
        self.quantum = quantum
        self._ring: collections.deque[FlowQueue] = collections.deque()
        self._queues: dict = {}
        self._visiting = False       # current head already got its quantum
        self._lock = threading.Lock()

    def admit(self, client_id, operations: Sequence[OperationCost] = ()):
        with self._lock:
            if client_id in self._queues:
                raise DuplicateClient(client_id)
            q = FlowQueue(client_id, collections.deque(operations))
            self._queues[client_id] = q
            self._ring.append(q)

    def enqueue(self, client_id, op: OperationCost):
        """Add one operation, admitting the client if it has no queue."""
        with self._lock:
            q = self._queues.get(client_id)
            if q is None:
                q = FlowQueue(client_id)
                self._queues[client_id] = q
                self._ring.append(q)
            q.pending.append(op)

    def remove(self, client_id):
        with self._lock:
            q = self._queues.pop(client_id, None)
            if q is None:
                return
            if self._ring and self._ring[0] is q:
                self._visiting = False
            self._ring.remove(q)

    def _drop_head(self):
        del self._queues[self._ring.popleft().client_id]
        self._visiting = False

    def next_grant(self):
        with self._lock:
            while self._ring:
                q = self._ring[0]
                if not q.pending:
                    self._drop_head()
                    continue
                if not self._visiting:
                    q.deficit += self.quantum
                    self._visiting = True
                head = q.pending[0]
                if q.deficit >= head.cost:
                    q.pending.popleft()
                    q.deficit -= head.cost
                    if not q.pending:
                        self._drop_head()   # residual deficit is discarded
                    return head
                self._ring.rotate(-1)
                self._visiting = False
            return Idle

    def deficit(self, client_id) -> float:
        return self._queues[client_id].deficit

    def depth(self, client_id) -> int:
        q = self._queues.get(client_id)
        return len(q.pending) if q else 0

    def clients(self) -> list:
        with self._lock:
            return [q.client_id for q in self._ring]

    def __len__(self):
        return len(self._ring)


class FcfsScheduler:
    """Grants operations strictly in the order they were queued."""

    def __init__(self):
        self._ops: collections.deque[OperationCost] = collections.deque()
        self._depth = collections.Counter()
        self._lock = threading.Lock()

    def admit(self, client_id, operations: Sequence[OperationCost] = ()):
        with self._lock:
            if self._depth[client_id]:
                raise DuplicateClient(client_id)
            for op in operations:
                self._ops.append(op)
                self._depth[client_id] += 1

    def enqueue(self, client_id, op: OperationCost):
        with self._lock:
            self._ops.append(op)
            self._depth[client_id] += 1

    def remove(self, client_id):
        with self._lock:
            self._ops = collections.deque(op for op in self._ops if op.client_id != client_id)
            self._depth.pop(client_id, None)

    def next_grant(self):
        with self._lock:
            if not self._ops:
                return Idle
            op = self._ops.popleft()
            self._depth[op.client_id] -= 1
            if not self._depth[op.client_id]:
                del self._depth[op.client_id]
            return op

    def depth(self, client_id) -> int:
        return self._depth.get(client_id, 0)

    def clients(self) -> list:
        with self._lock:
            return list(self._depth)

    def __len__(self):
        return len(self._depth)


def make_scheduler(config: SchedulerConfig):
    if config.policy is Policy.FCFS:
        return FcfsScheduler()
    return DrrScheduler(config.quantum)


# service-time study --------------------------------------------------------------

@dataclass(frozen=True)
class Request:
    client_id: int
    arrival: float
    technology: NetworkTechnology
    rtt: float
    operations: tuple


def generate_requests(rate_per_hour: float, duration: float, seed: int,
                      technology_mix: Sequence[NetworkTechnology] = NAMED_TECHNOLOGIES,
                      rtt_range: tuple = (0.0, RTT_MAX), ops_per_request: int = 120,
                      params: ProbeParameters = ProbeParameters()) -> list[Request]:
    """Poisson arrivals; each request is a whole two-way measurement campaign."""
    if not rate_per_hour > 0:
        raise ValueError("request rate must be > 0")
    rng = random.Random(seed)
    lam = rate_per_hour / 3600
    t = rng.expovariate(lam)
    out = []
    while t < duration:
        tech = rng.choice(technology_mix)
        rtt = rng.uniform(*rtt_range)
        cost = operation_cost(tech, rtt, params)
        cid = len(out)
        ops = tuple(OperationCost(cid, cost) for _ in range(ops_per_request))
        out.append(Request(cid, t, tech, rtt, ops))
        t += rng.expovariate(lam)
    return out


def serve(requests: Sequence[Request], config: SchedulerConfig) -> list[float]:
    """Single server, one granted operation at a time; service time per request."""
    sched = make_scheduler(config)
    remaining = {r.client_id: len(r.operations) for r in requests}
    done = {}
    now = 0.0
    pending = collections.deque(sorted(requests, key=lambda r: (r.arrival, r.client_id)))
    while pending or len(sched):
        while pending and pending[0].arrival <= now:
            r = pending.popleft()
            sched.admit(r.client_id, r.operations)
        op = sched.next_grant()
        if op is Idle:
            now = pending[0].arrival        # work conserving: idle only when empty
            continue
        now += op.cost
        remaining[op.client_id] -= 1
        if not remaining[op.client_id]:
            done[op.client_id] = now
    return [done[r.client_id] - r.arrival for r in requests]


def simulate_service_times(rate_per_hour: float, duration: float = 3600.0,
                           rtt_range: tuple = (0.0, RTT_MAX),
                           technology_mix: Sequence[NetworkTechnology] = NAMED_TECHNOLOGIES,
                           policy: Policy | str | None = Policy.DRR, seed: int = 0,
                           quantum: Optional[float] = None, ops_per_request: int = 120,
                           params: ProbeParameters = ProbeParameters()):
    """Service times under one policy, or a dict for both when ``policy`` is None."""
    reqs = generate_requests(rate_per_hour, duration, seed, technology_mix, rtt_range,
                             ops_per_request, params)
    qs = default_quantum(params=params) if quantum is None else quantum
    if policy is None:
        return {p: serve(reqs, SchedulerConfig(qs, p)) for p in Policy}
    return serve(reqs, SchedulerConfig(qs, Policy(policy)))


def summarize(times: Sequence[float]) -> dict:
    if not times:
        return {"n": 0, "mean": math.nan, "p50": math.nan, "p90": math.nan}
    ordered = sorted(times)
    q = statistics.quantiles(ordered, n=10, method="inclusive") if len(ordered) > 1 else [ordered[0]] * 9
    return {"n": len(ordered), "mean": statistics.fmean(ordered),
            "p50": statistics.median(ordered), "p90": q[8]}


def export_service_table(rows: Iterable[tuple], out: Optional[io.TextIOBase] = None) -> str:
    """rows: (rate, policy, times) -> tab separated rate/policy/mean/p50/p90."""
    lines = ["rate_per_hour\tpolicy\tmean_s\tp50_s\tp90_s"]
    for rate, policy, times in rows:
        s = summarize(times)
        lines.append(f"{rate:g}\t{Policy(policy).value}\t{s['mean']:.6f}\t{s['p50']:.6f}\t{s['p90']:.6f}")
    text = "\n".join(lines) + "\n"
    if out is not None:
        out.write(text)
    return text
