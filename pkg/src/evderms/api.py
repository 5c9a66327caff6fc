"""HTTP state/control API for a running engine, plus a server-sent-events
stream pushing every new sample. CORS is open so the web panel can be served
from anywhere on the LAN.

Endpoints:
    GET  /state            latest sample, mode, charger state
    GET  /trace?from=T     trace rows with t > T
    GET  /stream           SSE channel, one event per control cycle
    POST /mode             {"mode": "manual|zero_export|arbitrage|dr|idle", ...params}
    POST /setpoint         {"kw": x}, manual mode only
"""
from __future__ import annotations

import json
import queue
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .devsim import ChargerState
from .engine import (Arbitrage, DemandResponse, DrEvent, Engine, Idle, Manual,
                     ZeroExport, ontario_summer_2022)

STREAM_HEARTBEAT_S = 1.0


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


def _build_mode(engine: Engine, body: dict):
    name = body.get("mode")
    if name == "manual":
        kw = body.get("setpoint_kw", 0.0)
        if not isinstance(kw, (int, float)):
            raise ApiError(400, "setpoint_kw must be a number")
        return Manual(float(kw))
    if name == "zero_export":
        alpha = body.get("alpha_kw", engine.config.alpha_kw)
        if not isinstance(alpha, (int, float)) or alpha < 0:
            raise ApiError(400, "alpha_kw must be a non-negative number")
        return ZeroExport(float(alpha))
    if name == "arbitrage":
        try:
            return Arbitrage(ontario_summer_2022(),
                             float(body.get("soc_floor_pct", 25.0)),
                             float(body.get("soc_ceiling_pct", 90.0)))
        except (TypeError, ValueError):
            raise ApiError(400, "bad arbitrage limits") from None
    if name == "dr":
        try:
            event = DrEvent(float(body["start"]), float(body["end"]),
                            float(body["requested_kw"]))
        except (KeyError, TypeError, ValueError):
            raise ApiError(400, "dr needs numeric start, end, requested_kw") from None
        return DemandResponse(event)
    if name == "idle":
        return Idle()
    raise ApiError(400, f"unknown mode {name!r}")


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "evderms-api"

    def log_message(self, fmt, *args):  # quiet by default
        pass

    # -- helpers --------------------------------------------------------------

    @property
    def engine(self) -> Engine:
        return self.server.engine  # type: ignore[attr-defined]

    def _cors(self):
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Headers", "Content-Type, X-Auth-Token")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")

    def _send_json(self, obj, status: int = 200):
        data = json.dumps(obj).encode()
        self.send_response(status)
        self._cors()
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", 0))
        if length == 0:
            return {}
        try:
            body = json.loads(self.rfile.read(length))
        except json.JSONDecodeError:
            raise ApiError(400, "body is not valid JSON") from None
        if not isinstance(body, dict):
            raise ApiError(400, "body must be a JSON object")
        return body

    def _check_token(self):
        token = self.server.token  # type: ignore[attr-defined]
        if token and self.headers.get("X-Auth-Token") != token:
            raise ApiError(401, "missing or bad X-Auth-Token")

    # -- methods --------------------------------------------------------------

    def do_OPTIONS(self):
        self.send_response(204)
        self._cors()
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):
        url = urlparse(self.path)
        try:
            if url.path == "/state":
                self._send_json(self.engine.snapshot())
            elif url.path == "/trace":
                qs = parse_qs(url.query)
                since = float(qs.get("from", ["-inf"])[0])
                rows = self.engine.trace.since(since)
                self._send_json({"rows": [
                    {"t": r.t, "p_net_kw": r.p_net_kw, "p_ev_kw": r.p_ev_kw,
                     "soc_pct": r.soc_pct, "mode": r.mode, "setpoint_kw": r.setpoint_kw}
                    for r in rows]})
            elif url.path == "/stream":
                self._stream()
            else:
                self._serve_static(url.path)
        except ApiError as e:
            self._send_json({"error": e.message}, e.status)
        except (BrokenPipeError, ConnectionResetError):
            pass

    def do_POST(self):
        try:
            self._check_token()
            body = self._read_body()
            if self.path == "/mode":
                if self.engine.charger_state == ChargerState.FAULT:
                    raise ApiError(409, "charger is faulted")
                mode = _build_mode(self.engine, body)
                self.engine.set_mode(mode)
                self._send_json({"ok": True, "mode": mode.name})
            elif self.path == "/setpoint":
                if self.engine.charger_state == ChargerState.FAULT:
                    raise ApiError(409, "charger is faulted")
                if self.engine.snapshot()["mode"] != "manual":
                    raise ApiError(409, "setpoint only accepted in manual mode")
                kw = body.get("kw")
                if not isinstance(kw, (int, float)):
                    raise ApiError(400, "kw must be a number")
                self.engine.set_manual_setpoint(float(kw))
                self._send_json({"ok": True, "kw": kw})
            else:
                raise ApiError(404, f"no such endpoint {self.path}")
        except ApiError as e:
            self._send_json({"error": e.message}, e.status)

    # -- SSE ------------------------------------------------------------------

    def _stream(self):
        q = self.engine.subscribe()
        try:
            self.send_response(200)
            self._cors()
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.end_headers()
            while not self.server.closing:  # type: ignore[attr-defined]
                try:
                    row = q.get(timeout=STREAM_HEARTBEAT_S)
                    payload = json.dumps({
                        "t": row.t, "p_net_kw": row.p_net_kw, "p_ev_kw": row.p_ev_kw,
                        "soc_pct": row.soc_pct, "mode": row.mode,
                        "setpoint_kw": row.setpoint_kw})
                    self.wfile.write(f"data: {payload}\n\n".encode())
                except queue.Empty:
                    # named event so EventSource clients can watchdog the link
                    self.wfile.write(b"event: ping\ndata: {}\n\n")
                self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError, OSError):
            pass
        finally:
            self.engine.unsubscribe(q)

    # -- static panel ---------------------------------------------------------

    def _serve_static(self, path: str):
        root = self.server.panel_dir  # type: ignore[attr-defined]
        if root is None:
            raise ApiError(404, f"no such endpoint {path}")
        rel = path.lstrip("/") or "index.html"
        target = (root / rel).resolve()
        if not str(target).startswith(str(root.resolve())) or not target.is_file():
            raise ApiError(404, f"no such file {path}")
        types = {".html": "text/html", ".js": "text/javascript",
                 ".css": "text/css", ".map": "application/json"}
        data = target.read_bytes()
        self.send_response(200)
        self._cors()
        self.send_header("Content-Type", types.get(target.suffix, "application/octet-stream"))
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


class ApiServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, engine: Engine, host: str = "127.0.0.1", port: int = 0,
                 panel_dir: str | Path | None = None, token: str | None = None):
        super().__init__((host, port), _Handler)
        self.engine = engine
        self.panel_dir = Path(panel_dir) if panel_dir else None
        self.token = token
        self.closing = False
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start(self) -> "ApiServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def close(self) -> None:
        self.closing = True
        self.shutdown()
        self.server_close()


def serve_api(engine: Engine, host: str = "127.0.0.1", port: int = 0,
              panel_dir: str | Path | None = None, token: str | None = None) -> ApiServer:
    return ApiServer(engine, host, port, panel_dir, token).start()
