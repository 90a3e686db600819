"""Main server: hands out BCES addresses and stores georeferenced results.

Results live in an append-only JSON-lines file.  Device identifiers arrive
already hashed; ``anonymize`` is the one-way transform clients use.
"""

from __future__ import annotations

import hashlib
import hmac
import itertools
import json
import math
import os
import re
import threading
import time
from dataclasses import asdict, dataclass, fields
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional
from urllib.parse import parse_qs, urlparse

from .core import TechLabel

SCHEMA_VERSION = 1
HEARTBEAT_INTERVAL = 30.0
EARTH_RADIUS_KM = 6371.0088
_HASH = re.compile(r"^[0-9a-f]{64}$")


class ValidationError(ValueError):
    def __init__(self, problems: dict):
        self.problems = problems
        super().__init__("; ".join(f"{k}: {v}" for k, v in problems.items()))


class NoHealthyBces(LookupError):
    pass


def anonymize(device_id: str, salt: str) -> str:
    """Keyed one-way hash of a device identifier."""
    return hmac.new(salt.encode(), device_id.encode(), hashlib.sha256).hexdigest()


def normalize_operator(name: Optional[str]) -> Optional[str]:
    if name is None:
        return None
    name = " ".join(name.split()).upper()
    return name or None


def great_circle_km(lat1, lon1, lat2, lon2) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp, dl = p2 - p1, math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def _strict(cls, data: dict, required: tuple):
    if not isinstance(data, dict):
        raise ValidationError({"body": "expected an object"})
    known = {f.name for f in fields(cls)}
    problems = {k: "unknown field" for k in data if k not in known}
    problems.update({k: "required" for k in required if data.get(k) is None})
    if problems:
        raise ValidationError(problems)
    return cls(**data)


@dataclass
class BcesDescriptor:
    id: str
    address: str
    country: Optional[str] = None
    latitude: Optional[float] = None
    longitude: Optional[float] = None
    healthy: bool = True
    last_heartbeat: float = 0.0

    @classmethod
    def from_dict(cls, data: dict) -> "BcesDescriptor":
        return _strict(cls, data, ("id", "address"))


@dataclass
class MeasurementRecord:
    device_id: str
    timestamp: float
    country: str
    technology: str
    direction: str
    capacity_bps: float
    k_final: int
    n: int
    restarts: int
    bces_id: str
    latitude: Optional[float] = None
    longitude: Optional[float] = None
    operator: Optional[str] = None

    def __post_init__(self):
        self.operator = normalize_operator(self.operator)
        problems = {}
        if not isinstance(self.device_id, str) or not _HASH.match(self.device_id):
            problems["device_id"] = "must be an anonymized 64-hex-digit hash"
        if self.direction not in ("up", "down"):
            problems["direction"] = "must be 'up' or 'down'"
        try:
            TechLabel(self.technology)
        except ValueError:
            problems["technology"] = f"unknown technology {self.technology!r}"
        if not _positive_number(self.capacity_bps):
            problems["capacity_bps"] = "must be > 0"
        for name in ("k_final", "n"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                problems[name] = "must be a positive integer"
        if not isinstance(self.restarts, int) or self.restarts < 0:
            problems["restarts"] = "must be a non-negative integer"
        if not isinstance(self.timestamp, (int, float)):
            problems["timestamp"] = "must be seconds since the epoch"
        if (self.latitude is None) != (self.longitude is None):
            problems["latitude"] = "latitude and longitude go together"
        elif self.latitude is not None and not (-90 <= self.latitude <= 90
                                                and -180 <= self.longitude <= 180):
            problems["latitude"] = "coordinates out of range"
        if problems:
            raise ValidationError(problems)

    @classmethod
    def from_dict(cls, data: dict) -> "MeasurementRecord":
        required = ("device_id", "timestamp", "country", "technology", "direction",
                    "capacity_bps", "k_final", "n", "restarts", "bces_id")
        return _strict(cls, data, required)

    @property
    def key(self):
        return self.device_id, self.timestamp, self.direction

    @property
    def located(self) -> bool:
        return self.latitude is not None


def _positive_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x) and x > 0


class ResultStore:
    """Append-only record log; ``path=None`` keeps it in memory."""

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self._rows: list[tuple[int, MeasurementRecord]] = []
        self._by_key: dict = {}
        self._lock = threading.Lock()
        if path and os.path.exists(path):
            with open(path) as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    row = json.loads(line)
                    row.pop("schema_version", None)
                    rid = row.pop("id")
                    self._insert(rid, MeasurementRecord.from_dict(row))

    def _insert(self, rid, rec):
        self._rows.append((rid, rec))
        self._by_key[rec.key] = rid

    def append(self, rec: MeasurementRecord) -> int:
        with self._lock:
            rid = self._by_key.get(rec.key)
            if rid is not None:
                return rid
            rid = self._rows[-1][0] + 1 if self._rows else 1
            if self.path:
                line = json.dumps({"schema_version": SCHEMA_VERSION, "id": rid, **asdict(rec)},
                                  sort_keys=True)
                with open(self.path, "a") as fh:
                    fh.write(line + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            self._insert(rid, rec)
            return rid

    def snapshot(self) -> list[tuple[int, MeasurementRecord]]:
        with self._lock:
            return list(self._rows)

    def __len__(self):
        return len(self._rows)


def parse_bbox(text) -> tuple[float, float, float, float]:
    """``min_lon,min_lat,max_lon,max_lat``."""
    try:
        parts = [float(x) for x in str(text).split(",")]
    except ValueError:
        raise ValueError(f"malformed bounding box {text!r}") from None
    if len(parts) != 4:
        raise ValueError(f"bounding box needs 4 numbers, got {len(parts)}")
    w, s, e, n = parts
    if not (-180 <= w <= e <= 180 and -90 <= s <= n <= 90):
        raise ValueError(f"malformed bounding box {text!r}")
    return w, s, e, n


FILTER_KEYS = ("country", "operator", "technology", "direction", "since", "until", "bbox")


def filter_records(records, country=None, operator=None, technology=None, direction=None,
                   since=None, until=None, bbox=None) -> list[MeasurementRecord]:
    if bbox is not None and not isinstance(bbox, tuple):
        bbox = parse_bbox(bbox)
    operator = normalize_operator(operator)
    out = []
    for rec in records:
        if country is not None and rec.country != country:
            continue
        if operator is not None and rec.operator != operator:
            continue
        if technology is not None and rec.technology != technology:
            continue
        if direction is not None and rec.direction != direction:
            continue
        if since is not None and rec.timestamp < float(since):
            continue
        if until is not None and rec.timestamp > float(until):
            continue
        if bbox is not None:
            if not rec.located:
                continue
            w, s, e, n = bbox
            if not (w <= rec.longitude <= e and s <= rec.latitude <= n):
                continue
        out.append(rec)
    return sorted(out, key=lambda r: r.timestamp)


class Coordinator:
    def __init__(self, store: Optional[ResultStore] = None,
                 clock: Callable[[], float] = time.time,
                 heartbeat_interval: float = HEARTBEAT_INTERVAL):
        self.store = store or ResultStore()
        self.clock = clock
        self.heartbeat_interval = heartbeat_interval
        self._bces: dict[str, BcesDescriptor] = {}
        self._rr = itertools.count()
        self._lock = threading.Lock()

    def register_bces(self, desc: BcesDescriptor) -> BcesDescriptor:
        with self._lock:
            desc.last_heartbeat = self.clock()
            desc.healthy = True
            self._bces[desc.id] = desc
            return desc

    def heartbeat(self, bces_id: str):
        with self._lock:
            if bces_id not in self._bces:
                raise KeyError(bces_id)
            self._bces[bces_id].last_heartbeat = self.clock()

    def _refresh(self):
        now = self.clock()
        for d in self._bces.values():
            d.healthy = now - d.last_heartbeat <= 3 * self.heartbeat_interval

    def descriptors(self) -> list[BcesDescriptor]:
        with self._lock:
            self._refresh()
            return sorted(self._bces.values(), key=lambda d: d.id)

    def select_bces(self, country: Optional[str] = None, latitude: Optional[float] = None,
                    longitude: Optional[float] = None) -> BcesDescriptor:
        with self._lock:
            self._refresh()
            healthy = sorted((d for d in self._bces.values() if d.healthy), key=lambda d: d.id)
            if not healthy:
                raise NoHealthyBces("no healthy BCES registered")
            pool = [d for d in healthy if country and d.country == country] or healthy
            if latitude is None or longitude is None:
                return pool[next(self._rr) % len(pool)]

            def distance(d):
                if d.latitude is None:
                    return math.inf
                return great_circle_km(latitude, longitude, d.latitude, d.longitude)
            return min(pool, key=lambda d: (distance(d), d.id))

    def submit_result(self, record: MeasurementRecord | dict) -> int:
        if isinstance(record, dict):
            record = MeasurementRecord.from_dict(record)
        return self.store.append(record)

    def query_results(self, **filters) -> list[MeasurementRecord]:
        unknown = set(filters) - set(FILTER_KEYS)
        if unknown:
            raise ValueError(f"unknown filters {sorted(unknown)}")
        return filter_records((r for _, r in self.store.snapshot()), **filters)


# HTTP front end -----------------------------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    coordinator: Coordinator = None
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        pass

    def _reply(self, status, body):
        data = json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _body(self):
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        try:
            return json.loads(raw or b"{}")
        except json.JSONDecodeError as exc:
            raise ValidationError({"body": f"invalid JSON: {exc.msg}"}) from None

    def do_POST(self):
        path = urlparse(self.path).path
        c = self.coordinator
        try:
            body = self._body()
            if path == "/api/v1/bces/select":
                extra = set(body) - {"country", "latitude", "longitude"}
                if extra:
                    raise ValidationError({k: "unknown field" for k in extra})
                d = c.select_bces(body.get("country"), body.get("latitude"), body.get("longitude"))
                self._reply(HTTPStatus.OK, {"id": d.id, "address": d.address})
            elif path == "/api/v1/results":
                rid = c.submit_result(MeasurementRecord.from_dict(body))
                self._reply(HTTPStatus.OK, {"id": rid})
            elif path == "/api/v1/bces/register":
                d = c.register_bces(BcesDescriptor.from_dict(body))
                self._reply(HTTPStatus.OK, asdict(d))
            elif path == "/api/v1/bces/heartbeat":
                if set(body) != {"id"}:
                    raise ValidationError({"body": "expected exactly the field 'id'"})
                c.heartbeat(body["id"])
                self._reply(HTTPStatus.OK, {"id": body["id"]})
            else:
                self._reply(HTTPStatus.NOT_FOUND, {"error": "no such endpoint"})
        except ValidationError as exc:
            self._reply(HTTPStatus.BAD_REQUEST, {"error": "validation", "fields": exc.problems})
        except (TypeError, ValueError) as exc:
            self._reply(HTTPStatus.BAD_REQUEST, {"error": str(exc)})
        except NoHealthyBces as exc:
            self._reply(HTTPStatus.SERVICE_UNAVAILABLE, {"error": str(exc)})
        except KeyError as exc:
            self._reply(HTTPStatus.NOT_FOUND, {"error": f"unknown BCES {exc}"})

    def do_GET(self):
        url = urlparse(self.path)
        if url.path != "/api/v1/results":
            self._reply(HTTPStatus.NOT_FOUND, {"error": "no such endpoint"})
            return
        query = {k: v[-1] for k, v in parse_qs(url.query).items()}
        try:
            rows = self.coordinator.query_results(**query)
        except ValueError as exc:
            self._reply(HTTPStatus.BAD_REQUEST, {"error": str(exc)})
            return
        self._reply(HTTPStatus.OK, {"results": [asdict(r) for r in rows]})


def make_http_server(coordinator: Coordinator, bind=("127.0.0.1", 8080)) -> ThreadingHTTPServer:
    handler = type("Handler", (_Handler,), {"coordinator": coordinator})
    return ThreadingHTTPServer(bind, handler)
