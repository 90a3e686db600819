"""Deterministic discrete-event network simulator.

Time is an integer number of picoseconds.  Links are FIFO store-and-forward
servers: a packet of ``size`` bytes occupies a link for ``size*8/capacity``
seconds, then propagates for ``delay`` seconds.  Hosts expose
``SimEndpoint`` objects that implement the same interface as a UDP socket,
so protocol code cannot tell the difference.

Packet size on a link is the datagram length; no header overhead is added.
"""

from __future__ import annotations

import collections
import heapq
import io
import itertools
import json
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from . import wire
from .transport import DatagramEndpoint, Grant, Recv, Release

PS_PER_S = 10**12


def to_ps(seconds: float) -> int:
    return round(seconds * PS_PER_S)


def to_s(ps: int) -> float:
    return ps / PS_PER_S


class TopologyError(ValueError):
    pass


class Packet:
    __slots__ = ("pid", "src", "dst", "data", "route", "hop", "size", "tag")

    def __init__(self, pid, src, dst, data, route, size, tag):
        self.pid = pid
        self.src = src
        self.dst = dst
        self.data = data
        self.route = route
        self.hop = 0
        self.size = size
        self.tag = tag


def _tag(data: bytes):
    """(kind, session_id, train_index) for protocol datagrams."""
    if len(data) >= 14 and data[:2] == wire.MAGIC:
        return data[3], int.from_bytes(data[4:12], "big"), int.from_bytes(data[12:14], "big")
    return None


@dataclass
class BusyInterval:
    start: float
    end: float
    session_id: Optional[int]
    train_index: Optional[int]
    kind: Optional[int]


class SimLink:
    def __init__(self, world: "World", name: str, capacity: float, delay: float = 0.0,
                 queue_limit: int = 64 * 1024, loss: float = 0.0):
        if not capacity > 0:
            raise TopologyError(f"link {name}: capacity must be > 0")
        if delay < 0 or queue_limit <= 0 or not 0 <= loss < 1:
            raise TopologyError(f"link {name}: bad delay/queue_limit/loss")
        self.world = world
        self.name = name
        self.capacity = float(capacity)
        self.delay = float(delay)
        self.delay_ps = to_ps(delay)
        self.queue_limit = int(queue_limit)
        self.loss = float(loss)
        self.rng = random.Random(f"{world.seed}:link:{name}")
        self.busy_until = 0
        self._backlog = collections.deque()   # (end_ps, size) of accepted packets
        self._backlog_bytes = 0
        self.busy: list[tuple[int, int, object]] = []
        self._tx: dict[int, int] = {}

    def tx_ps(self, size: int) -> int:
        tx = self._tx.get(size)
        if tx is None:
            tx = self._tx[size] = round(size * 8 * PS_PER_S / self.capacity)
        return tx

    def offer(self, pkt: Packet) -> None:
        world = self.world
        now = world.now_ps
        backlog = self._backlog
        while backlog and backlog[0][0] <= now:
            self._backlog_bytes -= backlog.popleft()[1]
        size = pkt.size
        if self._backlog_bytes + size > self.queue_limit:
            world._drop(pkt, "overflow", self.name)
            return
        start = now if now > self.busy_until else self.busy_until
        tx = self._tx.get(size)
        end = start + (tx if tx is not None else self.tx_ps(size))
        self.busy_until = end
        backlog.append((end, size))
        self._backlog_bytes += size
        self.busy.append((start, end, pkt.tag))
        if self.loss and self.rng.random() < self.loss:
            world.schedule(end, world._drop, pkt, "loss", self.name)
            return
        route = pkt.route
        if route is not None and pkt.hop == len(route) - 1:
            target = world.hosts[pkt.dst].receiver()     # last hop: straight to the host
        else:
            target = world._arrive
        heapq.heappush(world._events, (end + self.delay_ps, next(world._seq), target, (pkt,)))

    def offer_many(self, pkts: list[Packet]) -> None:
        """``offer`` for packets that share a route and reach the link together."""
        if not pkts:
            return
        world = self.world
        now = world.now_ps
        backlog = self._backlog
        while backlog and backlog[0][0] <= now:
            self._backlog_bytes -= backlog.popleft()[1]
        route = pkts[0].route
        if pkts[0].hop == len(route) - 1:
            target = world.hosts[pkts[0].dst].receiver()
        else:
            target = world._arrive
        limit = self.queue_limit
        queued = self._backlog_bytes
        busy_until = self.busy_until
        sizes = [p.size for p in pkts]
        if not self.loss and queued + sum(sizes) <= limit:
            # nothing can be dropped: serialization times are a running sum
            tx_of = {n: self.tx_ps(n) for n in set(sizes)}
            tx = [tx_of[n] for n in sizes]
            ends = list(itertools.accumulate(tx, initial=now if now > busy_until else busy_until))
            starts, ends = ends[:-1], ends[1:]
            self._backlog.extend(zip(ends, sizes))
            self.busy.extend(zip(starts, ends, [p.tag for p in pkts]))
            delay, seq = self.delay_ps, world._seq
            new = [(e + delay, next(seq), target, (p,)) for e, p in zip(ends, pkts)]
            events = world._events
            if len(events) < len(new):
                events.extend(new)
                heapq.heapify(events)
            else:
                for ev in new:
                    heapq.heappush(events, ev)
            self._backlog_bytes = queued + sum(sizes)
            self.busy_until = ends[-1]
            return
        busy = self.busy
        tx_cache = self._tx
        delay = self.delay_ps
        loss = self.loss
        rand = self.rng.random
        events = world._events
        seq = world._seq
        push = heapq.heappush
        for pkt in pkts:
            size = pkt.size
            if queued + size > limit:
                world._drop(pkt, "overflow", self.name)
                continue
            start = now if now > busy_until else busy_until
            tx = tx_cache.get(size)
            end = busy_until = start + (tx if tx is not None else self.tx_ps(size))
            backlog.append((end, size))
            queued += size
            busy.append((start, end, pkt.tag))
            if loss and rand() < loss:
                push(events, (end, next(seq), world._drop, (pkt, "loss", self.name)))
            else:
                push(events, (end + delay, next(seq), target, (pkt,)))
        self._backlog_bytes = queued
        self.busy_until = busy_until

    def occupancy(self, probes_only: bool = True) -> list[BusyInterval]:
        out = []
        for start, end, tag in self.busy:
            if tag == "cross":
                if probes_only:
                    continue
                out.append(BusyInterval(to_s(start), to_s(end), None, None, None))
                continue
            kind, sid, train = tag if tag else (None, None, None)
            if probes_only and kind != wire.Kind.PROBE:
                continue
            out.append(BusyInterval(to_s(start), to_s(end), sid, train, kind))
        return out


class CrossTrafficSource:
    """Poisson packet arrivals offered to a single link.

    ``schedule`` is an optional list of ``(start_time, rate_bps)`` steps for
    time-varying load; otherwise ``rate`` applies between ``start`` and
    ``stop``.
    """

    def __init__(self, world: "World", link: SimLink, rate: float = 0.0,
                 packet_size: int = 1500, start: float = 0.0, stop: Optional[float] = None,
                 schedule: Optional[list] = None, name: str = "cross"):
        self.world = world
        self.link = link
        self.packet_size = packet_size
        steps = schedule if schedule is not None else [(start, rate)]
        if stop is not None:
            steps = list(steps) + [(stop, 0.0)]
        self.steps = sorted((to_ps(t), float(r)) for t, r in steps)
        if any(r < 0 for _, r in self.steps):
            raise TopologyError("cross traffic rate must be >= 0")
        self.rng = random.Random(f"{world.seed}:cross:{name}:{link.name}")
        self.sent = 0
        world.schedule(self.steps[0][0], self._tick)

    def _rate_at(self, t):
        rate, nxt = 0.0, None
        for i, (ts, r) in enumerate(self.steps):
            if ts <= t:
                rate = r
                nxt = self.steps[i + 1][0] if i + 1 < len(self.steps) else None
        return rate, nxt

    def _tick(self, emit: bool = False):
        world = self.world
        now = world.now_ps
        if emit:
            pkt = Packet(next(world._pids), None, None, b"", None, self.packet_size, "cross")
            world.stats["cross_injected"] += 1
            self.sent += 1
            self.link.offer(pkt)
        rate, nxt = self._rate_at(now)
        if rate <= 0:
            if nxt is not None:
                world.schedule(nxt, self._tick)
            return
        gap = self.rng.expovariate(rate / (self.packet_size * 8))
        t = now + max(1, to_ps(gap))
        if nxt is not None and t >= nxt:
            world.schedule(nxt, self._tick)   # memoryless: redraw at the step
        else:
            world.schedule(t, self._tick, True)


class SimEndpoint(DatagramEndpoint):
    """A host's socket.  Optionally quantizes its clock and coalesces deliveries."""

    def __init__(self, world: "World", name: str, granularity: float = 0.0,
                 coalescence: float = 0.0):
        if granularity < 0 or coalescence < 0:
            raise TopologyError(f"host {name}: impairments must be >= 0")
        self.world = world
        self.name = name
        self.granularity = float(granularity)
        self.coalescence = float(coalescence)
        self._g_ps = to_ps(granularity)
        self._w_ps = to_ps(coalescence)
        self.inbox = collections.deque()
        self.process: Optional[SimProcess] = None
        self.received = 0
        self.received_bytes = collections.Counter()    # by message kind

    @property
    def address(self):
        return self.name

    def _quantize(self, t_ps: int) -> int:
        if self._g_ps:
            return t_ps // self._g_ps * self._g_ps
        return t_ps

    def clock_to_ps(self, t: float) -> int:
        """Earliest real time at which ``now()`` reads at least ``t``."""
        ps = math.ceil(t * PS_PER_S)
        step = self._g_ps or 1
        ps = -(-ps // step) * step
        while to_s(ps) < t:     # float seconds must read back >= t
            ps += step
        return ps

    def now(self) -> float:
        return to_s(self._quantize(self.world.now_ps))

    def send(self, data: bytes, peer) -> None:
        self.world.send(self.name, peer, data)

    def send_many(self, datagrams, peer) -> None:
        self.world.send_many(self.name, peer, datagrams)

    def receive(self, timeout: Optional[float] = None):
        world = self.world
        limit = None if timeout is None else max(world.now_ps, self.clock_to_ps(self.now() + timeout))
        while not self.inbox:
            if not world.step(limit):
                if limit is not None:
                    world.now_ps = max(world.now_ps, limit)
                return None
        return self.inbox.popleft()

    def receiver(self):
        """Callback for packets leaving the last link towards this host."""
        return self._arrive if self._w_ps else self._deliver

    def _arrive(self, pkt: Packet):
        w = self._w_ps
        now = self.world.now_ps
        if w:
            release = -(-now // w) * w
            if release > now:
                self.world.schedule(release, self._deliver, pkt)
                return
        self._deliver(pkt)

    def _deliver(self, pkt: Packet):
        world = self.world
        world.stats["delivered"] += 1
        self.received += 1
        tag = pkt.tag
        self.received_bytes[tag[0] if tag else None] += pkt.size
        if world.tracing:
            world._trace("deliver", pkt)
        t = world.now_ps
        if self._g_ps:
            t -= t % self._g_ps
        item = (pkt.data, pkt.src, t / PS_PER_S)
        proc = self.process
        if proc is not None and not proc.done:
            proc._on_datagram(item)
        else:
            self.inbox.append(item)


class SimProcess:
    """A protocol generator scheduled by the simulator (grants are immediate)."""

    def __init__(self, world: "World", endpoint: SimEndpoint, gen):
        self.world = world
        self.endpoint = endpoint
        self.gen = gen
        self.done = False
        self.error: Optional[BaseException] = None
        self._result = None
        self._token = 0
        self._waiting = False
        self.finished_at: Optional[float] = None

    @property
    def result(self):
        if self.error is not None:
            raise self.error
        return self._result

    def _start(self):
        self._advance(None)

    def _advance(self, value):
        self._waiting = False
        while True:
            try:
                req = self.gen.send(value)
            except StopIteration as stop:
                self._finish(stop.value, None)
                return
            except Exception as exc:      # surfaced through .result
                self._finish(None, exc)
                return
            if isinstance(req, Recv):
                if self.endpoint.inbox:
                    value = self.endpoint.inbox.popleft()
                    continue
                self._waiting = True
                self._token += 1
                if req.deadline is not None:
                    at = max(self.world.now_ps, self.endpoint.clock_to_ps(req.deadline))
                    self.world.schedule(at, self._on_timer, self._token)
                return
            if isinstance(req, (Grant, Release)):
                value = None
                continue
            self._finish(None, TypeError(f"unexpected yield {req!r}"))
            return

    def _finish(self, result, error):
        self.done = True
        self._result = result
        self.error = error
        self.finished_at = self.endpoint.now()

    def _on_datagram(self, item):
        if self._waiting:
            self._advance(item)
        else:
            self.endpoint.inbox.append(item)

    def _on_timer(self, token):
        if self._waiting and token == self._token:
            self._advance(None)


class World:
    def __init__(self, seed: int = 0, trace: bool = False):
        self.seed = seed
        self.now_ps = 0
        self._events: list = []
        self._seq = itertools.count()
        self._pids = itertools.count()
        self.links: dict[str, SimLink] = {}
        self.hosts: dict[str, SimEndpoint] = {}
        self.routes: dict[tuple[str, str], list[SimLink]] = {}
        self.cross: list[CrossTrafficSource] = []
        self.processes: list[SimProcess] = []
        self.stats = collections.Counter()
        self.drops: list[tuple[float, str, str]] = []
        self.tracing = trace
        self.trace: list[tuple[int, str, str]] = []

    # construction ----------------------------------------------------
    def add_link(self, name, capacity, delay=0.0, queue_limit=64 * 1024, loss=0.0) -> SimLink:
        if name in self.links:
            raise TopologyError(f"duplicate link {name}")
        link = SimLink(self, name, capacity, delay, queue_limit, loss)
        self.links[name] = link
        return link

    def add_host(self, name, granularity=0.0, coalescence=0.0) -> SimEndpoint:
        if name in self.hosts:
            raise TopologyError(f"duplicate host {name}")
        ep = SimEndpoint(self, name, granularity, coalescence)
        self.hosts[name] = ep
        return ep

    def set_route(self, src: str, dst: str, link_names: Iterable[str]):
        names = list(link_names)
        if src not in self.hosts or dst not in self.hosts:
            raise TopologyError(f"route {src}->{dst}: unknown host")
        if not names:
            raise TopologyError(f"route {src}->{dst}: empty")
        if len(set(names)) != len(names):
            raise TopologyError(f"route {src}->{dst}: link repeated (cycle)")
        missing = [n for n in names if n not in self.links]
        if missing:
            raise TopologyError(f"route {src}->{dst}: unknown links {missing}")
        self.routes[(src, dst)] = [self.links[n] for n in names]

    def add_cross_traffic(self, link_name: str, **kwargs) -> CrossTrafficSource:
        if link_name not in self.links:
            raise TopologyError(f"cross traffic on unknown link {link_name}")
        src = CrossTrafficSource(self, self.links[link_name],
                                 name=kwargs.pop("name", f"cross{len(self.cross)}"), **kwargs)
        self.cross.append(src)
        return src

    def endpoint(self, name: str) -> SimEndpoint:
        return self.hosts[name]

    def bottleneck(self, src: str, dst: str) -> float:
        """Ground truth: the narrowest link on the route."""
        return min(link.capacity for link in self.routes[(src, dst)])

    # events ------------------------------------------------------------
    def schedule(self, t_ps: int, fn: Callable, *args) -> None:
        heapq.heappush(self._events, (t_ps, next(self._seq), fn, args))

    def step(self, until_ps: Optional[int] = None) -> bool:
        """Run one event at or before ``until_ps``; False when none is due."""
        events = self._events
        if not events or (until_ps is not None and events[0][0] > until_ps):
            return False
        t, _, fn, args = heapq.heappop(events)
        self.now_ps = t
        fn(*args)
        return True

    def _run(self, limit_ps: Optional[int], predicate: Optional[Callable[[], bool]] = None) -> bool:
        """Process events up to ``limit_ps``; True once ``predicate`` holds."""
        events = self._events
        pop = heapq.heappop
        while events and (limit_ps is None or events[0][0] <= limit_ps):
            if predicate is not None and predicate():
                return True
            t, _, fn, args = pop(events)
            self.now_ps = t
            fn(*args)
        return predicate is not None and predicate()

    def run_until_idle(self, max_time: Optional[float] = None) -> None:
        self._run(None if max_time is None else to_ps(max_time))

    def run_for(self, duration: float) -> None:
        limit = self.now_ps + to_ps(duration)
        self._run(limit)
        self.now_ps = max(self.now_ps, limit)

    def run_until(self, predicate: Callable[[], bool], max_time: Optional[float] = None) -> bool:
        return self._run(None if max_time is None else to_ps(max_time), predicate)

    @property
    def now(self) -> float:
        return to_s(self.now_ps)

    # packets -------------------------------------------------------------
    def send(self, src: str, dst, data: bytes) -> None:
        route = self.routes.get((src, dst))
        pkt = Packet(next(self._pids), src, dst, data, route, len(data), _tag(data))
        self.stats["injected"] += 1
        if self.tracing:
            self._trace("send", pkt)
        if route is None:
            self._drop(pkt, "no-route", src)
            return
        route[0].offer(pkt)

    def send_many(self, src: str, dst, datagrams) -> None:
        """Same as repeated ``send`` with the per-datagram lookups hoisted."""
        route = self.routes.get((src, dst))
        if route is None or self.tracing:
            for data in datagrams:
                self.send(src, dst, data)
            return
        pids = self._pids
        # the tag depends only on the header, which a train's datagrams share
        heads = [data[:14] for data in datagrams]
        tags = {h: _tag(h) for h in set(heads)}
        pkts = [Packet(next(pids), src, dst, data, route, len(data), tags[h])
                for data, h in zip(datagrams, heads)]
        self.stats["injected"] += len(pkts)
        route[0].offer_many(pkts)

    def _arrive(self, pkt: Packet):
        if pkt.tag == "cross":
            self.stats["cross_sunk"] += 1
            return
        pkt.hop += 1
        if pkt.hop < len(pkt.route):
            pkt.route[pkt.hop].offer(pkt)
        else:
            self.hosts[pkt.dst]._arrive(pkt)

    def _drop(self, pkt: Packet, cause: str, where: str):
        if pkt.tag == "cross":
            self.stats["cross_dropped"] += 1
            return
        self.stats["dropped"] += 1
        self.stats[f"dropped:{cause}"] += 1
        self.drops.append((self.now, cause, where))
        if self.tracing:
            self._trace(f"drop:{cause}@{where}", pkt)

    def in_flight(self) -> int:
        return self.stats["injected"] - self.stats["delivered"] - self.stats["dropped"]

    # processes -----------------------------------------------------------
    def spawn(self, endpoint: SimEndpoint | str, gen) -> SimProcess:
        if isinstance(endpoint, str):
            endpoint = self.hosts[endpoint]
        if endpoint.process is not None and not endpoint.process.done:
            raise RuntimeError(f"{endpoint.name} already runs a process")
        proc = SimProcess(self, endpoint, gen)
        endpoint.process = proc
        self.processes.append(proc)
        self.schedule(self.now_ps, proc._start)
        return proc

    # reporting ----------------------------------------------------------
    def link_occupancy_report(self, link_name: str, probes_only: bool = True) -> list[BusyInterval]:
        return self.links[link_name].occupancy(probes_only)

    def _trace(self, event, pkt):
        tag = pkt.tag
        detail = "" if tag is None else f"{tag[0]}:{tag[1]:x}:{tag[2]}"
        self.trace.append((self.now_ps, event, f"{pkt.pid}\t{pkt.src}\t{pkt.dst}\t{pkt.size}\t{detail}"))

    def export_trace(self, out: Optional[io.TextIOBase] = None) -> str:
        lines = ["time_ps\tevent\tpid\tsrc\tdst\tsize\ttag"]
        lines += [f"{t}\t{ev}\t{d}" for t, ev, d in self.trace]
        text = "\n".join(lines) + "\n"
        if out is not None:
            out.write(text)
        return text


def train_intervals(intervals: Iterable[BusyInterval]) -> dict[tuple[int, int], tuple[float, float]]:
    """Collapse per-packet busy intervals into one [start, end] per train."""
    spans: dict[tuple[int, int], list[float]] = {}
    for iv in intervals:
        key = (iv.session_id, iv.train_index)
        span = spans.setdefault(key, [iv.start, iv.end])
        span[0] = min(span[0], iv.start)
        span[1] = max(span[1], iv.end)
    return {k: (v[0], v[1]) for k, v in spans.items()}


def overlapping_trains(intervals: Iterable[BusyInterval]) -> list[tuple]:
    """Pairs of trains from different sessions whose link busy spans intersect."""
    spans = sorted(train_intervals(intervals).items(), key=lambda kv: kv[1][0])
    clashes = []
    for i, (key_a, (sa, ea)) in enumerate(spans):
        for key_b, (sb, eb) in spans[i + 1:]:
            if sb >= ea:
                break
            if key_a[0] != key_b[0]:
                clashes.append((key_a, key_b))
    return clashes


# topology description --------------------------------------------------------

def build_world(config: dict, seed: Optional[int] = None, trace: bool = False) -> World:
    """Build a world from a JSON-style description.

    ::

        {"seed": 1,
         "hosts": {"client": {"granularity": 0.001}, "server": {}},
         "links": {"down": {"capacity": 5e6, "delay": 0.005, "queue_limit": 65536, "loss": 0}},
         "routes": [{"from": "server", "to": "client", "links": ["down"]}],
         "cross_traffic": [{"link": "down", "rate": 1e6, "packet_size": 1500}]}
    """
    if not isinstance(config, dict):
        raise TopologyError("topology must be a mapping")
    unknown = set(config) - {"seed", "hosts", "links", "routes", "cross_traffic", "description"}
    if unknown:
        raise TopologyError(f"unknown topology keys {sorted(unknown)}")
    world = World(seed if seed is not None else config.get("seed", 0), trace=trace)
    try:
        for name, entry in config.get("hosts", {}).items():
            world.add_host(name, **(entry or {}))
        for name, entry in config.get("links", {}).items():
            world.add_link(name, **entry)
        for route in config.get("routes", []):
            world.set_route(route["from"], route["to"], route["links"])
        for entry in config.get("cross_traffic", []):
            entry = dict(entry)
            world.add_cross_traffic(entry.pop("link"), **entry)
    except TypeError as exc:
        raise TopologyError(str(exc)) from None
    except KeyError as exc:
        raise TopologyError(f"missing field {exc}") from None
    if len(world.hosts) < 2:
        raise TopologyError("need at least two hosts")
    return world


def load_topology(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def two_host_topology(down_bps: float, up_bps: Optional[float] = None, *,
                      delay: float = 0.005, lan_bps: float = 1e9,
                      queue_limit: int = 1 << 20, loss: float = 0.0,
                      client: Optional[dict] = None, seed: int = 0,
                      cross_down: float = 0.0, cross_up: float = 0.0) -> dict:
    """Server and client joined by a fast LAN hop and one bottleneck per direction.

    The LAN hop in front of each bottleneck lets cross traffic interleave
    with a train instead of queueing behind all of it.
    """
    up_bps = down_bps if up_bps is None else up_bps
    topo = {
        "seed": seed,
        "hosts": {"server": {}, "client": dict(client or {})},
        "links": {
            "srv_lan": {"capacity": lan_bps, "delay": 0.0001, "queue_limit": queue_limit},
            "down": {"capacity": down_bps, "delay": delay, "queue_limit": queue_limit, "loss": loss},
            "cli_lan": {"capacity": lan_bps, "delay": 0.0001, "queue_limit": queue_limit},
            "up": {"capacity": up_bps, "delay": delay, "queue_limit": queue_limit},
        },
        "routes": [
            {"from": "server", "to": "client", "links": ["srv_lan", "down"]},
            {"from": "client", "to": "server", "links": ["cli_lan", "up"]},
        ],
        "cross_traffic": [],
    }
    if cross_down:
        topo["cross_traffic"].append({"link": "down", "rate": cross_down, "name": "xdown"})
    if cross_up:
        topo["cross_traffic"].append({"link": "up", "rate": cross_up, "name": "xup"})
    return topo


def star_topology(clients: int, capacity: float = 10e6, *, access_bps: float = 54e6,
                  delay: float = 0.002, queue_limit: int = 1 << 20, seed: int = 0) -> dict:
    """One server whose own link (``srv_down``/``srv_up``) is shared by ``clients`` hosts.

    Client ``c<i>`` reaches it over a private access link with a slightly
    different delay, so the shared link is every path's bottleneck when
    ``access_bps`` exceeds ``capacity``.
    """
    topo = {"seed": seed, "hosts": {"server": {}}, "routes": [], "cross_traffic": [],
            "links": {"srv_down": {"capacity": capacity, "delay": delay, "queue_limit": queue_limit},
                      "srv_up": {"capacity": capacity, "delay": delay, "queue_limit": queue_limit}}}
    for i in range(clients):
        c = f"c{i}"
        topo["hosts"][c] = {}
        for d in ("down", "up"):
            topo["links"][f"{c}_{d}"] = {"capacity": access_bps, "delay": 0.003 + 0.002 * i,
                                         "queue_limit": queue_limit}
        topo["routes"].append({"from": "server", "to": c, "links": ["srv_down", f"{c}_down"]})
        topo["routes"].append({"from": c, "to": "server", "links": [f"{c}_up", "srv_up"]})
    return topo
