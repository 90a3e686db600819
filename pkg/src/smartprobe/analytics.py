"""Experiments on the simulator and exports of stored results."""

from __future__ import annotations

import csv
import io
import json
import random
import statistics
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import netsim, wire
from .core import (NAMED_TECHNOLOGIES, NetworkTechnology, ProbeParameters,
                   capacity_from_dispersion, coefficient_of_variation,
                   initial_train_length, pbprobe_traffic_bytes, select_min_delay_sum, train_length_sequence)
from .engine import MeasurementSession, Role, Unreachable, handshake, measure_path, run_estimator
from .scheduler import Policy, simulate_service_times, summarize
from .server import BcesServer
from .transport import run_process


# CDFs ----------------------------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalCdf:
    values: tuple
    fractions: tuple

    def __post_init__(self):
        if len(self.values) != len(self.fractions):
            raise ValueError("values and fractions differ in length")
        if any(b < a for a, b in zip(self.fractions, self.fractions[1:])):
            raise ValueError("fractions must be non-decreasing")
        if self.fractions and self.fractions[-1] != 1.0:
            raise ValueError("last fraction must be 1")

    @classmethod
    def from_sample(cls, sample: Iterable[float]) -> "EmpiricalCdf":
        ordered = sorted(sample)
        n = len(ordered)
        values, fractions = [], []
        for i, v in enumerate(ordered, 1):
            if values and values[-1] == v:
                fractions[-1] = i / n
            else:
                values.append(v)
                fractions.append(i / n)
        return cls(tuple(values), tuple(fractions))

    def __call__(self, x: float) -> float:
        idx = np.searchsorted(self.values, x, side="right")
        return 0.0 if idx == 0 else self.fractions[idx - 1]

    def __len__(self):
        return len(self.values)


# simulated worlds ------------------------------------------------------------------

WIFI = {"tech": "WIFI_AG", "radio_down": 54e6, "radio_up": 54e6, "radio_delay": 0.002}
CELLULAR = {"tech": "UMTS", "radio_down": 1.8e6, "radio_up": 1.8e6, "radio_delay": 0.030}
PROFILES = {"wifi": WIFI, "cellular": CELLULAR}


def validation_topology(limit_bps: float, profile: str = "wifi", radio_up: Optional[float] = None,
                        seed: int = 0, core_delay: float = 0.010) -> dict:
    """Phone on a radio link, server behind a symmetric rate limiter."""
    prof = PROFILES[profile]
    queue = 1 << 20
    up = prof["radio_up"] if radio_up is None else radio_up
    return {
        "seed": seed,
        "hosts": {"server": {}, "client": {}},
        "links": {
            "srv_lan_down": {"capacity": 1e9, "delay": 0.0001, "queue_limit": queue},
            "limit_down": {"capacity": limit_bps, "delay": core_delay, "queue_limit": queue},
            "radio_down": {"capacity": prof["radio_down"], "delay": prof["radio_delay"], "queue_limit": queue},
            "radio_up": {"capacity": up, "delay": prof["radio_delay"], "queue_limit": queue},
            "limit_up": {"capacity": limit_bps, "delay": core_delay, "queue_limit": queue},
            "srv_lan_up": {"capacity": 1e9, "delay": 0.0001, "queue_limit": queue},
        },
        "routes": [
            {"from": "server", "to": "client", "links": ["srv_lan_down", "limit_down", "radio_down"]},
            {"from": "client", "to": "server", "links": ["radio_up", "limit_up", "srv_lan_up"]},
        ],
    }


def measure_world(world: netsim.World, tech: NetworkTechnology,
                  params: ProbeParameters = ProbeParameters(), seed: int = 0,
                  client: str = "client", server: str = "server", sessions=None):
    srv = BcesServer(world.endpoint(server), params=params)
    world.spawn(server, srv.process())
    return measure_path(tech, server, world.endpoint(client), params,
                        random.Random(seed), sessions)


def validation_sweep(capacities: Sequence[float], profile: str = "wifi",
                     radio_up: Optional[float] = None, seed: int = 0,
                     params: ProbeParameters = ProbeParameters()) -> list[dict]:
    rows = []
    tech = NetworkTechnology.named(PROFILES[profile]["tech"])
    for i, cap in enumerate(capacities):
        world = netsim.build_world(validation_topology(cap, profile, radio_up, seed + i))
        pm = measure_world(world, tech, params, seed + i)
        truth_down = world.bottleneck("server", "client")
        truth_up = world.bottleneck("client", "server")
        down = pm.downlink.capacity_bps if pm.downlink else None
        up = pm.uplink.capacity_bps if pm.uplink else None
        rows.append({
            "configured_bps": cap, "down_bps": down, "up_bps": up,
            "down_error": None if down is None else (down - cap) / cap,
            "up_error": None if up is None else (up - cap) / cap,
            "down_truth_bps": truth_down, "up_truth_bps": truth_up,
            "down_s": pm.switched - pm.started, "up_s": pm.finished - pm.switched,
            "simulated_s": world.now,
        })
    return rows


WIFI_SWEEP = tuple(float(c) * 1e6 for c in range(1, 16))
CELLULAR_SWEEP = tuple(round(0.1 * c, 1) * 1e6 for c in range(1, 11))


def estimator_campaign(capacity: float, seed: int, n: int, load: float = 0.0,
                       tech: NetworkTechnology = NetworkTechnology.named("WIFI_AG"),
                       delay: float = 0.005, granularity: float = 0.0,
                       k: Optional[int] = None, loss: float = 0.0):
    """One downlink campaign; returns (estimate or exception, session, world)."""
    topo = netsim.two_host_topology(capacity, delay=delay, seed=seed, cross_down=load * capacity,
                                    client={"granularity": granularity} if granularity else None)
    topo["links"]["down"]["loss"] = loss
    world = netsim.build_world(topo)
    params = ProbeParameters(trains_per_campaign=n)
    srv = BcesServer(world.endpoint("server"), params=params)
    world.spawn("server", srv.process())
    cli = world.endpoint("client")
    sid = random.Random(seed).getrandbits(64)
    neg = run_process(handshake(cli, "server", sid, tech, Role.ESTIMATOR, params), cli)
    session = MeasurementSession.from_negotiation(sid, Role.ESTIMATOR, neg, params)
    if k is not None:
        session.k_current = k
    try:
        result = run_estimator(session, cli, "server")
    except Unreachable as exc:
        result = exc
    return result, session, world


# train-count study ------------------------------------------------------------------

@dataclass
class TrainCountStudyResult:
    ms: tuple
    errors: dict            # m -> array of relative errors across repetitions

    def __post_init__(self):
        top = max(self.ms)
        if np.any(self.errors[top] != 0):
            raise ValueError("error at the full campaign must be identically zero")

    def median(self, m):
        return float(np.median(self.errors[m]))

    def median_abs(self, m):
        return float(np.median(np.abs(self.errors[m])))

    def quartiles(self, m):
        return tuple(float(x) for x in np.percentile(self.errors[m], [25, 75]))

    def p90_abs(self, m):
        return float(np.percentile(np.abs(self.errors[m]), 90))

    def spread(self, m):
        lo, hi = np.percentile(self.errors[m], [5, 95])
        return float(hi - lo)

    def rows(self):
        for m in self.ms:
            q1, q3 = self.quartiles(m)
            yield {"m": m, "median": self.median(m), "q1": q1, "q3": q3, "p90_abs": self.p90_abs(m)}


def prefix_capacities(observations, packet_size: int, ms: Iterable[int]) -> dict:
    """C^m for each m: the min-delay-sum selection replayed over the first m trains."""
    out = {}
    for m in ms:
        _, d, _, _ = select_min_delay_sum(observations[:m], packet_size)
        out[m] = capacity_from_dispersion(observations[0].k_used, packet_size, d)
    return out


def train_count_study(repetitions: int = 100, n: int = 200, capacity: float = 54e6,
                      load: float = 0.10, seed: int = 0,
                      ms: Optional[Sequence[int]] = None) -> TrainCountStudyResult:
    ms = tuple(ms or range(2, n + 1))
    errors = {m: [] for m in ms}
    for rep in range(repetitions):
        est, _, _ = estimator_campaign(capacity, seed * 100_003 + rep, n, load)
        if isinstance(est, Exception):
            raise est
        obs = est.observations
        caps = prefix_capacities(obs, 1500, ms + (n,))
        for m in ms:
            errors[m].append((caps[m] - caps[n]) / caps[n])
    return TrainCountStudyResult(ms, {m: np.array(v) for m, v in errors.items()})


def robustness_study(runs: int = 100, n: int = 60, capacity: float = 54e6, load: float = 0.20,
                     seed: int = 0) -> list[tuple[float, float]]:
    """(min-delay-sum error, mean-over-trains error) per seeded run."""
    out = []
    for run in range(runs):
        est, _, world = estimator_campaign(capacity, seed * 100_003 + run, n, load)
        if isinstance(est, Exception):
            raise est
        mean = statistics.fmean(c for _, c in est.per_train_capacities)
        out.append((abs(est.capacity_bps - capacity) / capacity, abs(mean - capacity) / capacity))
    return out


def quantization_study(ks: Sequence[int], granularity: float = 0.001, capacity: float = 54e6,
                       paths: int = 10, n: int = 60, seed: int = 0) -> dict:
    """Mean coefficient of variation of per-train capacities for each fixed k.

    Path delays are drawn uniformly from 5 to 20 ms so that train arrivals
    take every phase against the receiver's clock tick.
    """
    rng = random.Random(seed)
    delays = [rng.uniform(0.005, 0.020) for _ in range(paths)]
    out = {}
    for k in ks:
        cvs = []
        for i, delay in enumerate(delays):
            est, session, _ = estimator_campaign(capacity, seed + i, n, delay=delay,
                                                 granularity=granularity, k=k)
            caps = [c for _, c in session.per_train] if isinstance(est, Exception) else \
                [c for _, c in est.per_train_capacities]
            cvs.append(coefficient_of_variation(caps) if len(caps) > 1 else float("inf"))
        out[k] = statistics.fmean(cvs)
    return out


# traffic accounting ---------------------------------------------------------------

def simulated_campaign_bytes(tech: NetworkTechnology, k: int, n: int = 60, seed: int = 0) -> int:
    """Probe bytes the Estimator receives in one clean campaign at fixed k."""
    est, _, world = estimator_campaign(tech.nominal_capacity, seed, n, tech=tech, k=k)
    if isinstance(est, Exception):
        raise est
    return world.endpoint("client").received_bytes[wire.Kind.PROBE]


def traffic_table(technologies: Sequence[NetworkTechnology] = NAMED_TECHNOLOGIES,
                  n: int = 60, seed: int = 0) -> list[dict]:
    rows = []
    for tech in technologies:
        k0 = initial_train_length(tech)
        per_k = {k: simulated_campaign_bytes(tech, k, n, seed) for k in train_length_sequence(k0)}
        rows.append({
            "technology": tech.name, "k_initial": k0,
            "pbprobe_bytes": pbprobe_traffic_bytes(tech),
            "smartprobe_bytes": per_k[k0],
            "worst_case_bytes": sum(per_k.values()),
            "worst_case_packets": sum(per_k.values()) // 1500,
        })
    return rows


# scheduler ------------------------------------------------------------------------

def scheduler_study(rates: Sequence[float] = (100, 200, 300, 400, 500, 600, 700, 800),
                    seeds: int = 10, seed: int = 0, duration: float = 3600.0) -> list[dict]:
    rows = []
    for rate in rates:
        pooled = {p: [] for p in Policy}
        means = {p: [] for p in Policy}
        for s in range(seeds):
            res = simulate_service_times(rate, duration, policy=None, seed=seed * 1000 + s)
            for p, times in res.items():
                pooled[p].extend(times)
                means[p].append(statistics.fmean(times) if times else 0.0)
        for p in Policy:
            summary = summarize(pooled[p])
            rows.append({"rate_per_hour": rate, "policy": p.value,
                         "mean_s": statistics.fmean(means[p]),
                         "p50_s": summary["p50"], "p90_s": summary["p90"]})
    return rows


# exports -----------------------------------------------------------------------------

def cdf_rows(records) -> list[dict]:
    groups = defaultdict(list)
    for r in records:
        groups[(r.technology, r.direction)].append(r.capacity_bps)
    rows = []
    for (tech, direction), sample in sorted(groups.items()):
        cdf = EmpiricalCdf.from_sample(sample)
        rows += [{"technology": tech, "direction": direction, "capacity_bps": v, "fraction": f}
                 for v, f in zip(cdf.values, cdf.fractions)]
    return rows


def geojson(records) -> dict:
    """One point per (operator, location, direction) group with its median capacity."""
    groups = defaultdict(list)
    for r in records:
        if r.located:
            groups[(r.operator or "", r.longitude, r.latitude, r.direction)].append(r)
    features = []
    for (op, lon, lat, direction), recs in sorted(groups.items(), key=lambda kv: tuple(map(str, kv[0]))):
        techs = [r.technology for r in recs]
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [lon, lat]},
            "properties": {
                "operator": op or None,
                "technology": max(sorted(set(techs)), key=techs.count),
                "direction": direction,
                "capacity_bps": statistics.median(r.capacity_bps for r in recs),
                "count": len(recs),
            },
        })
    return {"type": "FeatureCollection", "features": features}


def operator_table(records) -> tuple[list[dict], list[dict]]:
    """(per-operator medians, per-operator CDF points), split by direction."""
    groups = defaultdict(list)
    for r in records:
        groups[(r.operator or "UNKNOWN", r.direction)].append(r.capacity_bps)
    summary, cdf = [], []
    for (op, direction), sample in sorted(groups.items()):
        summary.append({"operator": op, "direction": direction, "count": len(sample),
                        "median_bps": statistics.median(sample)})
        c = EmpiricalCdf.from_sample(sample)
        cdf += [{"operator": op, "direction": direction, "capacity_bps": v, "fraction": f}
                for v, f in zip(c.values, c.fractions)]
    return summary, cdf


def to_delimited(rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> str:
    buf = io.StringIO()
    columns = list(columns or (rows[0].keys() if rows else []))
    writer = csv.DictWriter(buf, columns, delimiter="\t", lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def to_aligned(rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> str:
    columns = list(columns or (rows[0].keys() if rows else []))

    def fmt(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return "-" if v is None else str(v)
    cells = [[fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def dump_geojson(records) -> str:
    return json.dumps(geojson(records), indent=2)
