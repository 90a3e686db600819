"""smartprobe command line."""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import socket
import sys
import time
import urllib.error
import urllib.parse
import urllib.request
import uuid
from dataclasses import asdict
from pathlib import Path

from . import analytics, netsim
from .coordinator import (FILTER_KEYS, Coordinator, MeasurementRecord, ResultStore,
                          anonymize, make_http_server)
from .core import NetworkTechnology, ProbeParameters
from .engine import measure_path
from .scheduler import Policy, SchedulerConfig, default_quantum
from .server import BcesServer, serve
from .transport import UdpEndpoint

SALT_ENV = "SMARTPROBE_SALT"


def _hostport(text: str, default_port: int = 4960) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host:
        host, port = text, ""
    return host or "0.0.0.0", int(port or default_port)


def _params(path) -> ProbeParameters:
    if not path:
        return ProbeParameters()
    with open(path) as fh:
        return ProbeParameters.from_dict(json.load(fh))


def _mbps(bps) -> str:
    return f"{bps / 1e6:.3f} Mbps"


def _http(url: str, body=None):
    data = None if body is None else json.dumps(body).encode()
    req = urllib.request.Request(url, data=data, method="GET" if data is None else "POST",
                                 headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req, timeout=10) as resp:
        return json.load(resp)


# measure -----------------------------------------------------------------------------

def cmd_measure(args) -> int:
    tech = NetworkTechnology.parse(args.tech)
    params = _params(args.params)
    lat = lon = None
    if args.geo:
        lat, lon = (float(x) for x in args.geo.split(","))
    bces_id = "sim" if args.sim else (args.server or "")
    server = args.server
    if not args.sim and not server:
        if not args.coordinator:
            print("error: need --server, --sim or --coordinator", file=sys.stderr)
            return 2
        choice = _http(args.coordinator.rstrip("/") + "/api/v1/bces/select",
                       {k: v for k, v in (("country", args.country), ("latitude", lat),
                                          ("longitude", lon)) if v is not None})
        server, bces_id = choice["address"], choice["id"]

    rng = random.Random(args.seed)
    sessions = []
    if args.sim:
        world = netsim.build_world(netsim.load_topology(args.sim), seed=args.seed)
        srv = BcesServer(world.endpoint("server"), params=params)
        world.spawn("server", srv.process())
        pm = measure_path(tech, "server", world.endpoint("client"), params, rng, sessions)
    else:
        host, port = _hostport(server)
        try:
            addr = socket.getaddrinfo(host, port, socket.AF_INET, socket.SOCK_DGRAM)[0][4]
        except socket.gaierror as exc:
            print(f"down: Unreachable: {exc}\nup: Unreachable: {exc}")
            return 1
        endpoint = UdpEndpoint()
        try:
            pm = measure_path(tech, addr, endpoint, params, rng, sessions)
        finally:
            endpoint.close()

    print(f"technology {tech.name}, negotiated k {pm.negotiated_k_initial}")
    if pm.downlink:
        for i, cap in pm.downlink.per_train_capacities:
            mark = " *" if i == pm.downlink.chosen_train_index else ""
            print(f"  train {i:3d}  {_mbps(cap)}{mark}")
    for name, est, err in (("down", pm.downlink, pm.downlink_error), ("up", pm.uplink, pm.uplink_error)):
        if est:
            print(f"{name} {_mbps(est.capacity_bps)} (k={est.k_final}, restarts={est.restarts})")
        else:
            print(f"{name} {err}")

    if args.coordinator and (pm.downlink or pm.uplink):
        salt = os.environ.get(SALT_ENV)
        if not salt:
            print(f"error: set {SALT_ENV} to submit results", file=sys.stderr)
            return 2
        device = anonymize(args.device_id or f"{uuid.getnode():012x}", salt)
        now = time.time()
        for direction, est in (("down", pm.downlink), ("up", pm.uplink)):
            if est is None:
                continue
            rec = MeasurementRecord(device, now, args.country or "", tech.label.value, direction,
                                    est.capacity_bps, est.k_final, est.trains_received,
                                    est.restarts, bces_id, lat, lon, args.operator)
            _http(args.coordinator.rstrip("/") + "/api/v1/results", asdict(rec))
    return 0 if pm.downlink and pm.uplink else 1


# servers ------------------------------------------------------------------------------

def cmd_serve(args) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    config = SchedulerConfig(args.quantum or default_quantum(), Policy(args.policy.upper()))
    serve(_hostport(args.bind), config, _params(args.params), NetworkTechnology.parse(args.tech),
          max_sessions=args.max_sessions)
    return 0


def cmd_coordinator(args) -> int:
    httpd = make_http_server(Coordinator(ResultStore(args.store)), _hostport(args.bind, 8080))
    print(f"coordinator on http://{httpd.server_address[0]}:{httpd.server_address[1]}")
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
    return 0


# experiments ----------------------------------------------------------------------------

def _emit(rows, name, out_dir, columns=None):
    print(analytics.to_aligned(rows, columns), end="")
    if out_dir:
        path = Path(out_dir)
        path.mkdir(parents=True, exist_ok=True)
        (path / f"{name}.tsv").write_text(analytics.to_delimited(rows, columns))


def cmd_experiment(args) -> int:
    kind = args.experiment
    if kind == "validation":
        profiles = ["wifi", "cellular"] if args.profile == "both" else [args.profile]
        for prof in profiles:
            sweep = analytics.WIFI_SWEEP if prof == "wifi" else analytics.CELLULAR_SWEEP
            rows = analytics.validation_sweep(sweep, prof, args.radio_up, args.seed)
            print(f"# {prof}")
            _emit(rows, f"validation_{prof}", args.out,
                  ["configured_bps", "down_bps", "down_error", "up_bps", "up_error"])
    elif kind == "trains":
        res = analytics.train_count_study(args.repetitions, args.n, seed=args.seed)
        _emit(list(res.rows()), "trains", args.out)
    elif kind == "scheduler":
        rates = [float(r) for r in args.rates.split(",")]
        _emit(analytics.scheduler_study(rates, args.seeds, args.seed), "scheduler", args.out)
    elif kind == "traffic":
        rows = analytics.traffic_table(seed=args.seed)
        for r in rows:
            for key in ("pbprobe", "smartprobe", "worst_case"):
                r[f"{key}_mb"] = r[f"{key}_bytes"] / 1e6
        _emit(rows, "traffic", args.out,
              ["technology", "k_initial", "pbprobe_mb", "smartprobe_mb", "worst_case_mb",
               "worst_case_packets"])
    return 0


# export -------------------------------------------------------------------------------

def _records(args):
    filters = {k: getattr(args, k) for k in FILTER_KEYS if getattr(args, k) is not None}
    if args.coordinator:
        url = args.coordinator.rstrip("/") + "/api/v1/results"
        if filters:
            url += "?" + urllib.parse.urlencode(filters)
        return [MeasurementRecord(**row) for row in _http(url)["results"]]
    return Coordinator(ResultStore(args.store)).query_results(**filters)


def cmd_export(args) -> int:
    records = _records(args)
    if args.format == "cdf":
        text = analytics.to_delimited(analytics.cdf_rows(records),
                                      ["technology", "direction", "capacity_bps", "fraction"])
    elif args.format == "geojson":
        text = analytics.dump_geojson(records) + "\n"
    else:
        summary, cdf = analytics.operator_table(records)
        text = analytics.to_delimited(summary, ["operator", "direction", "count", "median_bps"])
        if args.out:
            Path(args.out).with_suffix(".cdf.tsv").write_text(
                analytics.to_delimited(cdf, ["operator", "direction", "capacity_bps", "fraction"]))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smartprobe", description="Bottleneck capacity measurement")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("measure", help="measure both directions against a BCES")
    where = m.add_mutually_exclusive_group()
    where.add_argument("--server", help="BCES address host:port")
    where.add_argument("--sim", help="topology file with hosts 'client' and 'server'")
    m.add_argument("--coordinator", help="coordinator base URL")
    m.add_argument("--tech", required=True, help="access technology, e.g. WIFI_AG or OTHER:1e9")
    m.add_argument("--geo", help="lat,lon")
    m.add_argument("--operator")
    m.add_argument("--country")
    m.add_argument("--device-id")
    m.add_argument("--params", help="JSON file with probe parameters")
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_measure)

    s = sub.add_parser("serve", help="run a BCES")
    s.add_argument("--bind", default="0.0.0.0:4960")
    s.add_argument("--quantum", type=float)
    s.add_argument("--policy", default="DRR", choices=["DRR", "FCFS", "drr", "fcfs"])
    s.add_argument("--params")
    s.add_argument("--tech", default="WIFI_N")
    s.add_argument("--max-sessions", type=int, default=64)
    s.set_defaults(func=cmd_serve)

    c = sub.add_parser("coordinator", help="run the coordinator HTTP service")
    c.add_argument("--bind", default="127.0.0.1:8080")
    c.add_argument("--store", default="results.jsonl")
    c.set_defaults(func=cmd_coordinator)

    e = sub.add_parser("experiment", help="reproduce an experiment on the simulator")
    e.add_argument("experiment", choices=["validation", "trains", "scheduler", "traffic"])
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="directory for tab-separated copies of the tables")
    e.add_argument("--profile", default="both", choices=["wifi", "cellular", "both"])
    e.add_argument("--radio-up", type=float, help="fix the radio uplink capacity (bps)")
    e.add_argument("--repetitions", type=int, default=100)
    e.add_argument("--n", type=int, default=200)
    e.add_argument("--rates", default="100,200,300,400,500,600,700,800")
    e.add_argument("--seeds", type=int, default=10)
    e.set_defaults(func=cmd_experiment)

    x = sub.add_parser("export", help="export stored results")
    x.add_argument("--format", required=True, choices=["cdf", "geojson", "operator-table"])
    src = x.add_mutually_exclusive_group(required=True)
    src.add_argument("--store", help="results file")
    src.add_argument("--coordinator", help="coordinator base URL")
    for key in FILTER_KEYS:
        x.add_argument(f"--{key}")
    x.add_argument("--out")
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
