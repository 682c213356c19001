"""Minimal telemetry service: append-only NDJSON store plus HTTP endpoints.

POST /readings ingests one estimated-glucose record and acknowledges it
with a sequence number only after the line is durably appended.  GET
/readings serves per-patient time-range queries from an in-memory index
rebuilt from the log at startup.
"""
from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, asdict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

GLUCOSE_LIMITS = (0.0, 600.0)       # exclusive bounds
CLOCK_SKEW_ALLOWANCE = 300          # seconds a timestamp may lead received_at


class ValidationError(Exception):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


@dataclass(frozen=True)
class TelemetryRecord:
    patient_id: str
    device_id: str
    glucose_est: float
    model_id: str
    timestamp: int
    received_at: int = 0            # server-assigned
    seq: int = 0                    # server-assigned

    def to_dict(self) -> dict:
        return asdict(self)


def validate_payload(payload: dict, received_at: int) -> TelemetryRecord:
    if not isinstance(payload, dict):
        raise ValidationError("body", "expected a JSON object")
    for name in ("patient_id", "device_id", "model_id"):
        v = payload.get(name)
        if not isinstance(v, str) or not v:
            raise ValidationError(name, "required non-empty string")
    g = payload.get("glucose_est")
    if not isinstance(g, (int, float)) or isinstance(g, bool):
        raise ValidationError("glucose_est", "required number")
    lo, hi = GLUCOSE_LIMITS
    if not (lo < float(g) < hi):
        raise ValidationError("glucose_est", f"glucose out of range ({lo}, {hi})")
    ts = payload.get("timestamp")
    if not isinstance(ts, int) or isinstance(ts, bool):
        raise ValidationError("timestamp", "required integer epoch seconds")
    if ts > received_at + CLOCK_SKEW_ALLOWANCE:
        raise ValidationError("timestamp", "too far in the future")
    return TelemetryRecord(
        patient_id=payload["patient_id"], device_id=payload["device_id"],
        glucose_est=float(g), model_id=payload["model_id"],
        timestamp=ts, received_at=received_at,
    )


class TelemetryStore:
    """Append-only NDJSON log with an in-memory index.

    Appends are serialized by a lock; acknowledgment (the returned seq)
    happens only after the line is flushed to the file.  Corrupt lines in
    an existing log are skipped and reported.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._records: list[TelemetryRecord] = []
        self._seq = 0
        self.skipped_offsets: list[int] = []
        if self.path.exists():
            self._replay()
        self._fh = self.path.open("a", encoding="utf-8", newline="\n")

    def _replay(self) -> None:
        with self.path.open("r", encoding="utf-8") as fh:
            for offset, line in enumerate(fh):
                line = line.strip()
                if not line:
                    continue
                try:
                    doc = json.loads(line)
                    rec = TelemetryRecord(**doc)
                except (json.JSONDecodeError, TypeError):
                    self.skipped_offsets.append(offset)
                    continue
                self._records.append(rec)
                self._seq = max(self._seq, rec.seq)

    def ingest(self, payload: dict, now: int | None = None) -> int:
        """Validate, durably append, then return the assigned seq."""
        received_at = int(time.time()) if now is None else now
        rec = validate_payload(payload, received_at)
        with self._lock:
            self._seq += 1
            rec = TelemetryRecord(**{**rec.to_dict(), "seq": self._seq})
            self._fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
            self._fh.flush()
            self._records.append(rec)
            return rec.seq

    def query(self, patient_id: str, ts_from: int, ts_to: int) -> list[TelemetryRecord]:
        if ts_from > ts_to:
            raise ValidationError("range", "from must be <= to")
        with self._lock:
            snapshot = list(self._records)
        hits = [r for r in snapshot
                if r.patient_id == patient_id and ts_from <= r.timestamp <= ts_to]
        hits.sort(key=lambda r: (r.timestamp, r.seq))
        return hits

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def close(self) -> None:
        with self._lock:
            self._fh.flush()
            self._fh.close()


class _Handler(BaseHTTPRequestHandler):
    store: TelemetryStore = None  # set by make_server

    def log_message(self, *args):  # silence default stderr chatter
        pass

    def _reply(self, code: int, doc: dict) -> None:
        body = json.dumps(doc).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        if urlparse(self.path).path != "/readings":
            self._reply(404, {"error": "not found"})
            return
        try:
            length = int(self.headers.get("Content-Length", 0))
            payload = json.loads(self.rfile.read(length))
            seq = self.store.ingest(payload)
        except ValidationError as exc:
            self._reply(400, {"error": exc.reason, "field": exc.field})
        except json.JSONDecodeError:
            self._reply(400, {"error": "invalid JSON", "field": "body"})
        except OSError:
            self._reply(500, {"error": "storage failure"})
        else:
            self._reply(201, {"seq": seq})

    def do_GET(self):
        url = urlparse(self.path)
        if url.path == "/health":
            self._reply(200, {"status": "ok", "records": len(self.store)})
            return
        if url.path != "/readings":
            self._reply(404, {"error": "not found"})
            return
        q = parse_qs(url.query)
        try:
            patient = q["patient"][0]
            ts_from = int(q.get("from", ["0"])[0])
            ts_to = int(q.get("to", [str(2 ** 62)])[0])
        except (KeyError, ValueError):
            self._reply(400, {"error": "patient, from, to query parameters required",
                              "field": "query"})
            return
        try:
            hits = self.store.query(patient, ts_from, ts_to)
        except ValidationError as exc:
            self._reply(400, {"error": exc.reason, "field": exc.field})
            return
        self._reply(200, {"records": [r.to_dict() for r in hits]})


def make_server(addr: str, store_path) -> ThreadingHTTPServer:
    """Bind a server for `host:port` without starting it (caller runs
    serve_forever, possibly on a thread)."""
    host, _, port = addr.rpartition(":")
    store = TelemetryStore(store_path)
    handler = type("BoundHandler", (_Handler,), {"store": store})
    server = ThreadingHTTPServer((host or "127.0.0.1", int(port)), handler)
    server.telemetry_store = store
    return server


def serve(addr: str, store_path) -> None:
    """Run the telemetry service until interrupted; flushes on shutdown."""
    server = make_server(addr, store_path)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        server.telemetry_store.close()
