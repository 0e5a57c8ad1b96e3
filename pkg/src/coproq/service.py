"""HTTP labeling service and the bridge that hands query segments from the
trainer to a human.

The trainer publishes one segment at a time through the bridge and blocks
until the human labels it, passes it, or the wait times out (the segment
then counts as passed so training never stalls). The service is a plain
stdlib threaded HTTP server; frames carry structured world state that the
browser console renders itself.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .exceptions import ConfigurationError

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 600.0


@dataclass
class PendingQuery:
    segment_id: int
    frames: list            # one dict per step: world state + executed
    action_names: list
    labels: list = field(default_factory=list)
    resolved: bool = False
    passed: bool = False


class BridgeError(Exception):
    def __init__(self, status: int, reason: str):
        super().__init__(reason)
        self.status = status
        self.reason = reason


class QueryBridge:
    """Exclusive handoff between the trainer thread and the service: at
    most one pending query, exactly one outcome per segment id."""

    def __init__(self, action_names, n_cf: int = 1,
                 timeout: float = DEFAULT_TIMEOUT):
        self.action_names = list(action_names)
        self.n_cf = n_cf
        self.timeout = timeout
        self._cond = threading.Condition()
        self._pending: PendingQuery | None = None
        self._next_id = 0
        self._progress = {"status": "waiting", "iteration": 0,
                          "total_iters": 0, "labels_total": 0,
                          "segments_total": 0, "segments_done": 0}

    # trainer side

    def ask(self, segment) -> list:
        """Publish one segment and wait for its outcome. Returns the label
        list, empty on a pass or timeout."""
        if segment.frames is None:
            raise ConfigurationError(
                "human labeling needs rendered frames on the segment")
        frames = []
        for k, frame in enumerate(segment.frames):
            doc = dict(frame)
            doc["executed_action"] = self.action_names[
                int(segment.actions[k])]
            frames.append(doc)
        with self._cond:
            query = PendingQuery(segment_id=self._next_id, frames=frames,
                                 action_names=self.action_names)
            self._next_id += 1
            self._pending = query
            self._cond.notify_all()
            ok = self._cond.wait_for(lambda: query.resolved,
                                     timeout=self.timeout)
            self._pending = None
            if not ok:
                query.resolved = True
                log.warning("segment %d timed out after %.0fs; counted "
                            "as a pass", query.segment_id, self.timeout)
                return []
            self._progress["segments_done"] += 1
            return list(query.labels)

    def update_progress(self, **kw) -> None:
        with self._cond:
            self._progress.update(kw)

    def finish(self) -> None:
        self.update_progress(status="done")

    # service side

    def progress(self) -> dict:
        with self._cond:
            doc = dict(self._progress)
            doc["pending"] = int(self._pending is not None)
            return doc

    def current(self) -> PendingQuery | None:
        with self._cond:
            return self._pending

    def submit_label(self, segment_id: int, t, action) -> dict:
        with self._cond:
            query = self._require(segment_id)
            n = len(query.frames)
            if not isinstance(t, int) or isinstance(t, bool) or \
                    not 0 <= t < n:
                raise BridgeError(422, f"t must be an int in [0, {n})")
            action_idx = self._resolve_action(action)
            if any(lt == t for lt, _ in query.labels):
                raise BridgeError(409, f"timestep {t} already labeled")
            query.labels.append((t, action_idx))
            if len(query.labels) >= self.n_cf:
                query.resolved = True
            self._cond.notify_all()
            return {"ok": True, "labels": len(query.labels),
                    "resolved": query.resolved}

    def submit_pass(self, segment_id: int) -> dict:
        with self._cond:
            query = self._require(segment_id)
            query.passed = True
            query.resolved = True
            self._cond.notify_all()
            return {"ok": True, "resolved": True}

    def _require(self, segment_id: int) -> PendingQuery:
        query = self._pending
        if query is None or query.segment_id != segment_id:
            raise BridgeError(
                409, f"segment {segment_id} is not pending")
        if query.resolved:
            raise BridgeError(
                409, f"segment {segment_id} already resolved")
        return query

    def _resolve_action(self, action) -> int:
        if isinstance(action, bool):
            raise BridgeError(422, "unknown action")
        if isinstance(action, int):
            if 0 <= action < len(self.action_names):
                return action
            raise BridgeError(422, f"action index {action} out of range")
        if isinstance(action, str) and action in self.action_names:
            return self.action_names.index(action)
        raise BridgeError(422, f"unknown action {action!r}")


class _Handler(BaseHTTPRequestHandler):
    bridge: QueryBridge = None
    static_root: str | None = None

    def log_message(self, fmt, *args):
        log.debug("http: " + fmt, *args)

    def _send_json(self, status: int, doc) -> None:
        body = json.dumps(doc).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _read_json(self):
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        try:
            return json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise BridgeError(422, "body must be UTF-8 JSON")

    def do_GET(self):
        if self.path == "/api/session":
            self._send_json(200, self.bridge.progress())
            return
        if self.path == "/api/query/next":
            query = self.bridge.current()
            if query is None:
                self.send_response(204)
                self.send_header("Access-Control-Allow-Origin", "*")
                self.end_headers()
                return
            self._send_json(200, {
                "segment_id": query.segment_id,
                "frames": query.frames,
                "action_names": query.action_names,
            })
            return
        self._serve_static()

    def do_POST(self):
        parts = self.path.strip("/").split("/")
        # api/query/<id>/<label|pass>
        if len(parts) == 4 and parts[:2] == ["api", "query"] and \
                parts[3] in ("label", "pass"):
            try:
                segment_id = int(parts[2])
            except ValueError:
                self._send_json(404, {"error": "bad segment id"})
                return
            try:
                if parts[3] == "label":
                    doc = self._read_json()
                    if not isinstance(doc, dict) or "t" not in doc or \
                            "action" not in doc:
                        raise BridgeError(422, "body needs {t, action}")
                    out = self.bridge.submit_label(segment_id, doc["t"],
                                                   doc["action"])
                else:
                    out = self.bridge.submit_pass(segment_id)
                self._send_json(200, out)
            except BridgeError as e:
                self._send_json(e.status, {"error": e.reason})
            return
        self._send_json(404, {"error": "no such endpoint"})

    def _serve_static(self):
        import os
        root = self.static_root
        path = self.path.split("?", 1)[0]
        if root is None:
            self._send_json(404, {"error": "no such endpoint"})
            return
        if path in ("", "/"):
            path = "/index.html"
        full = os.path.realpath(os.path.join(root, path.lstrip("/")))
        if not full.startswith(os.path.realpath(root)) or \
                not os.path.isfile(full):
            self._send_json(404, {"error": "not found"})
            return
        ctype = {
            ".html": "text/html", ".js": "text/javascript",
            ".css": "text/css", ".map": "application/json",
        }.get(os.path.splitext(full)[1], "application/octet-stream")
        with open(full, "rb") as f:
            body = f.read()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


class LabelService:
    """Threaded HTTP server bound to a bridge; static_root optionally
    serves the built browser console."""

    def __init__(self, bridge: QueryBridge, host: str = "127.0.0.1",
                 port: int = 8765, static_root: str | None = None):
        handler = type("BoundHandler", (_Handler,),
                       {"bridge": bridge, "static_root": static_root})
        self.server = ThreadingHTTPServer((host, port), handler)
        self.bridge = bridge
        self._thread = None

    @property
    def port(self) -> int:
        return self.server.server_address[1]

    def start(self) -> None:
        self._thread = threading.Thread(target=self.server.serve_forever,
                                        name="label-service", daemon=True)
        self._thread.start()
        log.info("labeling service listening on port %d", self.port)

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        if self._thread:
            self._thread.join(timeout=5)
