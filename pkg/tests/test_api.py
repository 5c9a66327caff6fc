"""HTTP control surface and the sample stream."""
import json
import socket
import threading
import time
import urllib.error
import urllib.request

import pytest

from evderms.api import serve_api
from evderms.devsim import Simulation, scenario_load
from evderms.engine import EngineConfig, Manual, lockstep


class Stack:
    """Simulation + engine + API with a background lockstep pump."""

    def __init__(self, token=None):
        self.sim = Simulation(scenario_load("sweepTest"), shared_endpoint=True)
        self.engine, self.driver = lockstep(self.sim, EngineConfig(sample_hz=5.0))
        self.engine.take_control()
        self.api = serve_api(self.engine, token=token)
        self.base = f"http://127.0.0.1:{self.api.port}"
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._pump, daemon=True)
        self._thread.start()

    def _pump(self):
        while not self._stop.is_set():
            self.driver.run(0.2)
            time.sleep(0.001)

    def close(self):
        self._stop.set()
        self._thread.join(timeout=2)
        self.api.close()
        self.engine.close()
        self.sim.close()

    def get(self, path):
        with urllib.request.urlopen(self.base + path, timeout=2) as r:
            return r.status, json.loads(r.read())

    def post(self, path, body, headers=None):
        req = urllib.request.Request(
            self.base + path, data=json.dumps(body).encode(),
            headers={"Content-Type": "application/json", **(headers or {})})
        try:
            with urllib.request.urlopen(req, timeout=2) as r:
                return r.status, json.loads(r.read())
        except urllib.error.HTTPError as e:
            return e.code, json.loads(e.read())


@pytest.fixture()
def stack():
    s = Stack()
    yield s
    s.close()


def wait_for(predicate, timeout=5.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(0.02)
    return False


def test_state_and_mode_roundtrip(stack):
    status, state = stack.get("/state")
    assert status == 200
    assert state["mode"] == "idle"
    assert wait_for(lambda: stack.get("/state")[1]["sample"] is not None)

    status, body = stack.post("/mode", {"mode": "zero_export", "alpha_kw": 0.1})
    assert status == 200 and body["mode"] == "zero_export"
    assert wait_for(lambda: stack.get("/state")[1]["mode"] == "zero_export")
    assert stack.get("/state")[1]["mode_params"] == {"alpha_kw": 0.1}


def test_manual_setpoint_dispatches(stack):
    stack.post("/mode", {"mode": "manual", "setpoint_kw": 0.0})
    assert wait_for(lambda: stack.get("/state")[1]["mode"] == "manual")
    status, _ = stack.post("/setpoint", {"kw": 2.0})
    assert status == 200
    assert wait_for(lambda: (stack.get("/state")[1]["sample"] or {}).get("p_ev_kw", 0) > 1.9)


def test_setpoint_conflicts_outside_manual(stack):
    stack.post("/mode", {"mode": "arbitrage"})
    assert wait_for(lambda: stack.get("/state")[1]["mode"] == "arbitrage")
    status, body = stack.post("/setpoint", {"kw": 2.0})
    assert status == 409
    assert "manual" in body["error"]


def test_bad_mode_and_bad_json(stack):
    status, body = stack.post("/mode", {"mode": "warp"})
    assert status == 400
    req = urllib.request.Request(stack.base + "/mode", data=b"not json",
                                 headers={"Content-Type": "application/json"})
    try:
        urllib.request.urlopen(req, timeout=2)
        raised = None
    except urllib.error.HTTPError as e:
        raised = e.code
    assert raised == 400


def test_dr_mode_needs_fields(stack):
    status, _ = stack.post("/mode", {"mode": "dr"})
    assert status == 400
    status, _ = stack.post("/mode", {"mode": "dr", "start": 0, "end": 60,
                                     "requested_kw": 3.0})
    assert status == 200


def test_trace_since_filter(stack):
    assert wait_for(lambda: len(stack.engine.trace.rows) > 20)
    _, full = stack.get("/trace?from=-1")
    cut = full["rows"][len(full["rows"]) // 2]["t"]
    _, tail = stack.get(f"/trace?from={cut}")
    assert tail["rows"]
    assert all(r["t"] > cut for r in tail["rows"])


def test_stream_pushes_samples(stack):
    sock = socket.create_connection(("127.0.0.1", stack.api.port), timeout=3)
    sock.sendall(b"GET /stream HTTP/1.1\r\nHost: x\r\nAccept: text/event-stream\r\n\r\n")
    sock.settimeout(3)
    buf = b""
    deadline = time.monotonic() + 5
    events = []
    while time.monotonic() < deadline and len(events) < 3:
        buf += sock.recv(4096)
        while b"\n\n" in buf:
            chunk, buf = buf.split(b"\n\n", 1)
            for line in chunk.splitlines():
                if line.startswith(b"data: "):
                    events.append(json.loads(line[6:]))
    sock.close()
    assert len(events) >= 3
    ts = [e["t"] for e in events]
    assert ts == sorted(ts)
    assert all("p_net_kw" in e and "soc_pct" in e for e in events)


def test_options_preflight_cors(stack):
    req = urllib.request.Request(stack.base + "/mode", method="OPTIONS")
    with urllib.request.urlopen(req, timeout=2) as r:
        assert r.status == 204
        assert r.headers["Access-Control-Allow-Origin"] == "*"


def test_fault_returns_409(stack):
    stack.sim.battery.soc_pct = 5.0  # trips the charger fault on next tick
    assert wait_for(lambda: stack.get("/state")[1]["charger_state"] == "FAULT")
    status, body = stack.post("/mode", {"mode": "manual", "setpoint_kw": 1.0})
    assert status == 409


def test_static_token_guard():
    s = Stack(token="sesame")
    try:
        status, _ = s.post("/mode", {"mode": "idle"})
        assert status == 401
        status, _ = s.post("/mode", {"mode": "idle"}, headers={"X-Auth-Token": "sesame"})
        assert status == 200
    finally:
        s.close()
