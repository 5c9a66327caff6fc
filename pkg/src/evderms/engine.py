"""DERMS control engine: polls the meter and charger over the register
protocol, computes setpoints for the active control mode, dispatches writes,
and logs a synchronized trace.

Sign conventions, fixed artifact-wide: P_EV > 0 is charging (grid to EV),
P_NET > 0 is import. The zero-export law is stated under these signs so its
steady-state fixed point is P_NET = alpha:

    EV_SET(t) = alpha - (P_NET(t-1) - P_EV(t-1)) = alpha - house_load(t-1)
"""
from __future__ import annotations

import csv
import json
import math
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import wire
from .devsim import ChargerState


class DeviceTimeout(Exception):
    """A device did not answer; carries which one."""

    def __init__(self, device: str, cause: Exception | None = None):
        super().__init__(f"{device} unreachable" + (f": {cause}" if cause else ""))
        self.device = device


class RemoteDisabled(Exception):
    """Charger is in local mode; remote dispatch refused."""


class EmptyInput(Exception):
    """An aggregate was asked for zero samples."""


# ---------------------------------------------------------------------------
# Samples and traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sample:
    """One synchronized measurement tuple; house load is derived exactly."""

    t: float
    p_net_kw: float
    p_ev_kw: float
    soc_pct: float

    @property
    def house_load_kw(self) -> float:
        return self.p_net_kw - self.p_ev_kw


@dataclass(frozen=True)
class TraceRow:
    t: float
    p_net_kw: float
    p_ev_kw: float
    soc_pct: float
    mode: str
    setpoint_kw: float


TRACE_COLUMNS = ("t", "p_net_kw", "p_ev_kw", "soc_pct", "mode", "setpoint_kw")


class TraceLog:
    """Append-only cycle log, in memory plus optional CSV/JSON-lines file."""

    def __init__(self, path: str | Path | None = None):
        self.rows: list[TraceRow] = []
        self._lock = threading.Lock()
        self._file = None
        self._writer = None
        self._jsonl = False
        if path is not None:
            path = Path(path)
            self._jsonl = path.suffix in (".jsonl", ".ndjson")
            self._file = open(path, "w", newline="")
            if not self._jsonl:
                self._writer = csv.writer(self._file)
                self._writer.writerow(TRACE_COLUMNS)

    def append(self, row: TraceRow) -> None:
        with self._lock:
            self.rows.append(row)
            if self._file is not None:
                if self._jsonl:
                    self._file.write(json.dumps({
                        "t": row.t, "p_net_kw": row.p_net_kw, "p_ev_kw": row.p_ev_kw,
                        "soc_pct": row.soc_pct, "mode": row.mode,
                        "setpoint_kw": row.setpoint_kw}) + "\n")
                else:
                    self._writer.writerow([f"{row.t:.3f}", f"{row.p_net_kw:.6f}",
                                           f"{row.p_ev_kw:.6f}", f"{row.soc_pct:.4f}",
                                           row.mode, f"{row.setpoint_kw:.6f}"])

    def since(self, t: float) -> list[TraceRow]:
        with self._lock:
            return [r for r in self.rows if r.t > t]

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None


def load_trace(path: str | Path) -> list[TraceRow]:
    path = Path(path)
    rows: list[TraceRow] = []
    if path.suffix in (".jsonl", ".ndjson"):
        for line in path.read_text().splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            rows.append(TraceRow(d["t"], d["p_net_kw"], d["p_ev_kw"], d["soc_pct"],
                                 d["mode"], d["setpoint_kw"]))
        return rows
    with open(path, newline="") as f:
        for d in csv.DictReader(f):
            rows.append(TraceRow(float(d["t"]), float(d["p_net_kw"]), float(d["p_ev_kw"]),
                                 float(d["soc_pct"]), d["mode"], float(d["setpoint_kw"])))
    return rows


# ---------------------------------------------------------------------------
# Tariffs and control modes
# ---------------------------------------------------------------------------

OFF_PEAK, MID_PEAK, ON_PEAK = "OffPeak", "MidPeak", "OnPeak"


@dataclass(frozen=True)
class TariffBand:
    start_s: float  # seconds since midnight
    end_s: float    # may wrap past midnight
    rate: float     # $/kWh
    label: str


class TariffSchedule:
    def __init__(self, bands: list[TariffBand]):
        if not bands:
            raise ValueError("tariff schedule needs at least one band")
        if any(b.rate <= 0 for b in bands):
            raise ValueError("tariff rates must be positive")
        covered = 0.0
        for b in bands:
            covered += (b.end_s - b.start_s) % 86400.0 or 86400.0
        if abs(covered - 86400.0) > 1.0:
            raise ValueError("tariff bands must cover the day exactly once")
        self.bands = list(bands)

    def band_at(self, tod_s: float) -> TariffBand:
        tod = tod_s % 86400.0
        for b in self.bands:
            if b.start_s <= b.end_s:
                if b.start_s <= tod < b.end_s:
                    return b
            elif tod >= b.start_s or tod < b.end_s:
                return b
        raise ValueError(f"no tariff band covers {tod}")  # unreachable when validated

    def rate_at(self, tod_s: float) -> float:
        return self.band_at(tod_s).rate

    def label_at(self, tod_s: float) -> str:
        return self.band_at(tod_s).label


def ontario_summer_2022() -> TariffSchedule:
    """Ontario residential TOU, summer 2022: off-peak 19:00-07:00 at
    $0.082/kWh, on-peak 11:00-17:00 at $0.17/kWh, mid-peak otherwise."""
    h = 3600.0
    return TariffSchedule([
        TariffBand(7 * h, 11 * h, 0.113, MID_PEAK),
        TariffBand(11 * h, 17 * h, 0.170, ON_PEAK),
        TariffBand(17 * h, 19 * h, 0.113, MID_PEAK),
        TariffBand(19 * h, 7 * h, 0.082, OFF_PEAK),
    ])


@dataclass(frozen=True)
class DrEvent:
    start: float
    end: float
    requested_kw: float

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError("demand-response event must have start < end")
        if self.requested_kw < 0:
            raise ValueError("requested_kw must be non-negative")


@dataclass(frozen=True)
class Manual:
    setpoint_kw: float
    name: str = "manual"


@dataclass(frozen=True)
class ZeroExport:
    alpha_kw: float
    name: str = "zero_export"

    def __post_init__(self):
        if self.alpha_kw < 0:
            raise ValueError("alpha_kw must be non-negative")


@dataclass(frozen=True)
class Arbitrage:
    tariff: TariffSchedule
    soc_floor_pct: float = 25.0
    soc_ceiling_pct: float = 90.0
    name: str = "arbitrage"


@dataclass(frozen=True)
class DemandResponse:
    event: DrEvent
    name: str = "dr"


@dataclass(frozen=True)
class Idle:
    name: str = "idle"


ControlMode = Manual | ZeroExport | Arbitrage | DemandResponse | Idle


# ---------------------------------------------------------------------------
# Setpoint laws
# ---------------------------------------------------------------------------

def zero_export_setpoint(prev: Sample, alpha_kw: float, p_max_kw: float) -> float:
    """Discharge to meet the previous cycle's house load minus the tolerance;
    the fixed point is P_NET = alpha."""
    sp = alpha_kw - prev.house_load_kw
    return max(-p_max_kw, min(p_max_kw, sp))


def arbitrage_decide(tod_s: float, tariff: TariffSchedule, soc_pct: float,
                     soc_floor_pct: float, soc_ceiling_pct: float,
                     p_max_kw: float) -> float:
    label = tariff.label_at(tod_s)
    if label == OFF_PEAK and soc_pct < soc_ceiling_pct:
        return p_max_kw
    if label == ON_PEAK and soc_pct > soc_floor_pct:
        return -p_max_kw
    return 0.0


def dr_dispatch(now: float, event: DrEvent, p_max_kw: float) -> float:
    if event.start <= now < event.end:
        return -min(p_max_kw, event.requested_kw)
    return 0.0


def assess_freq_regulation(latencies_s: list[float], threshold_s: float = 6.0) -> dict:
    """Nearest-rank 95th percentile against the regulation-signal timeframe."""
    if not latencies_s:
        raise EmptyInput("no latency samples")
    ordered = sorted(latencies_s)
    rank = math.ceil(0.95 * len(ordered))
    p95 = ordered[rank - 1]
    return {"suitable": p95 <= threshold_s, "p95_s": p95}


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

@dataclass
class EngineConfig:
    sample_hz: float = 5.0
    alpha_kw: float = 0.3
    meter: tuple[str, int] = ("127.0.0.1", wire.DEFAULT_METER_PORT)
    charger: tuple[str, int] = ("127.0.0.1", wire.DEFAULT_CHARGER_PORT)
    log_path: str | None = None
    nameplate_kw: float = 7.4
    i_dc_max_a: float = 17.0
    io_timeout_s: float = 1.0
    max_failures: int = 3       # consecutive failed cycles before fail-safe
    chatter_band_kw: float = 0.01
    api_token: str | None = None

    def __post_init__(self):
        if self.sample_hz <= 0:
            raise ValueError("sample_hz must be positive")


@dataclass(frozen=True)
class CommandRecord:
    sent_at: float
    setpoint_kw: float
    mode: str


class Engine:
    """Single-writer control loop. API threads queue requests; the loop
    applies them at the next cycle boundary."""

    def __init__(self, config: EngineConfig, time_fn=None, tod_fn=None):
        self.config = config
        self.time_fn = time_fn or time.time
        self.tod_fn = tod_fn or (lambda: time.time() % 86400.0)
        self.meter = wire.RegisterClient(*config.meter, wire.METER_UNIT_ID,
                                         timeout=config.io_timeout_s)
        if tuple(config.charger) == tuple(config.meter):
            # both units behind one endpoint: share the connection and
            # pipeline the poll reads
            self.charger = self.meter
        else:
            self.charger = wire.RegisterClient(*config.charger, wire.CHARGER_UNIT_ID,
                                               timeout=config.io_timeout_s)
        self.mode: ControlMode = Idle()
        self.trace = TraceLog(config.log_path)
        self.command_log: list[CommandRecord] = []
        self.last_sample: Sample | None = None
        self.charger_state: ChargerState = ChargerState.DISCONNECTED
        self.dc_voltage: float = 375.0

        self._requests: queue.Queue = queue.Queue()
        self._lock = threading.Lock()
        self._subscribers: list[queue.Queue] = []
        self._last_written: float | None = None
        self._remote_known: bool | None = None
        self._run_sent = False
        self._failures = {"meter": 0, "charger": 0}
        self._failsafe_pending = False
        self._stop = threading.Event()

    # -- public control surface (thread-safe) --------------------------------

    def set_mode(self, mode: ControlMode) -> None:
        self._requests.put(("mode", mode))

    def set_manual_setpoint(self, kw: float) -> None:
        self._requests.put(("setpoint", kw))

    def snapshot(self) -> dict:
        with self._lock:
            s = self.last_sample
            return {
                "sample": None if s is None else {
                    "t": s.t, "p_net_kw": s.p_net_kw, "p_ev_kw": s.p_ev_kw,
                    "soc_pct": s.soc_pct, "house_load_kw": s.house_load_kw},
                "mode": self.mode.name,
                "mode_params": _mode_params(self.mode),
                "charger_state": self.charger_state.name,
                "setpoint_kw": self._last_written,
                "alpha_kw": self.config.alpha_kw,
            }

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=1024)
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    # -- device I/O -----------------------------------------------------------

    def take_control(self) -> None:
        """Claim remote control of the charger (writes remote-enable)."""
        e = wire.CHARGER_MAP.entry("remote_enable")
        try:
            self.charger.write(e.address, wire.encode_value(e.encoding, 1),
                               unit_id=wire.CHARGER_UNIT_ID)
        except (wire.WireError, OSError) as exc:
            raise DeviceTimeout("charger", exc) from exc
        self._remote_known = True

    def p_max_kw(self) -> float:
        return min(self.config.nameplate_kw,
                   self.dc_voltage * self.config.i_dc_max_a / 1000.0)

    def poll_cycle(self) -> Sample:
        """Read both devices within one cycle: both requests go out together
        and the replies share a single timestamp."""
        t = self.time_fn()
        if self.charger is self.meter:
            try:
                m_req, c_req = self.meter.read_many([
                    (0x0000, 2, wire.METER_UNIT_ID),
                    (0x0104, 5, wire.CHARGER_UNIT_ID)])
                mw = self.meter.read_reply(m_req)
                cw = self.meter.read_reply(c_req)
            except (wire.WireError, OSError) as exc:
                raise DeviceTimeout("charger", exc) from exc
        else:
            try:
                m_req = self.meter.read_request(0x0000, 2)
            except (wire.WireError, OSError) as exc:
                raise DeviceTimeout("meter", exc) from exc
            try:
                c_req = self.charger.read_request(0x0104, 5)
                cw = self.charger.read_reply(c_req)
            except (wire.WireError, OSError) as exc:
                # drain the meter reply so its stream stays framed
                try:
                    self.meter.read_reply(m_req)
                except (wire.WireError, OSError):
                    pass
                raise DeviceTimeout("charger", exc) from exc
            try:
                mw = self.meter.read_reply(m_req)
            except (wire.WireError, OSError) as exc:
                raise DeviceTimeout("meter", exc) from exc
        p_net = wire.power_from_words(mw[0], mw[1])
        p_ev = wire.power_from_words(cw[0], cw[1])
        soc = cw[2] / 10.0
        self.charger_state = ChargerState(cw[3]) if cw[3] in ChargerState._value2member_map_ else ChargerState.FAULT
        self.dc_voltage = cw[4] / 10.0
        sample = Sample(t, p_net, p_ev, soc)
        with self._lock:
            self.last_sample = sample
        return sample

    def dispatch(self, setpoint_kw: float) -> CommandRecord | None:
        """Write the setpoint (and run command if needed); suppresses writes
        closer than the chatter band to the last one."""
        if self._remote_known is None:
            e = wire.CHARGER_MAP.entry("remote_enable")
            try:
                self._remote_known = bool(self.charger.read(
                    e.address, 1, unit_id=wire.CHARGER_UNIT_ID)[0])
            except (wire.WireError, OSError) as exc:
                raise DeviceTimeout("charger", exc) from exc
        if not self._remote_known:
            raise RemoteDisabled("charger remote-control register is 0 (local mode)")
        if (self._last_written is not None
                and abs(setpoint_kw - self._last_written) < self.config.chatter_band_kw):
            return None
        sp = wire.CHARGER_MAP.entry("setpoint")
        run = wire.CHARGER_MAP.entry("run_command")
        try:
            self.charger.write(sp.address, wire.codec_power(setpoint_kw),
                               unit_id=wire.CHARGER_UNIT_ID)
            if not self._run_sent or self.charger_state == ChargerState.READY:
                self.charger.write(run.address, (1,), unit_id=wire.CHARGER_UNIT_ID)
                self._run_sent = True
        except (wire.WireError, OSError) as exc:
            raise DeviceTimeout("charger", exc) from exc
        self._last_written = setpoint_kw
        record = CommandRecord(self.time_fn(), setpoint_kw, self.mode.name)
        self.command_log.append(record)
        return record

    # -- control loop ---------------------------------------------------------

    def _apply_requests(self) -> None:
        while True:
            try:
                kind, value = self._requests.get_nowait()
            except queue.Empty:
                return
            if kind == "mode":
                with self._lock:
                    self.mode = value
            elif kind == "setpoint":
                with self._lock:
                    if isinstance(self.mode, Manual):
                        self.mode = Manual(float(value))

    def _desired_setpoint(self, sample: Sample) -> float | None:
        mode = self.mode
        if isinstance(mode, Manual):
            return mode.setpoint_kw  # charger clamps; the command is logged as sent
        if isinstance(mode, ZeroExport):
            return zero_export_setpoint(sample, mode.alpha_kw, self.p_max_kw())
        if isinstance(mode, Arbitrage):
            return arbitrage_decide(self.tod_fn(), mode.tariff, sample.soc_pct,
                                    mode.soc_floor_pct, mode.soc_ceiling_pct,
                                    self.p_max_kw())
        if isinstance(mode, DemandResponse):
            return dr_dispatch(sample.t, mode.event, self.p_max_kw())
        return 0.0  # Idle keeps the charger at zero

    def cycle(self) -> Sample | None:
        """One control cycle; returns the sample, or None on a failed poll."""
        self._apply_requests()
        if self._failsafe_pending:
            try:
                self.dispatch_failsafe()
            except DeviceTimeout:
                pass
        try:
            sample = self.poll_cycle()
            self._failures["meter"] = self._failures["charger"] = 0
        except DeviceTimeout as exc:
            self._failures[exc.device] += 1
            if self._failures[exc.device] >= self.config.max_failures:
                with self._lock:
                    self.mode = Idle()
                self._failsafe_pending = True
                self._failures[exc.device] = 0
            return None

        setpoint = self._desired_setpoint(sample)
        if setpoint is not None and self.charger_state != ChargerState.FAULT:
            try:
                self.dispatch(setpoint)
            except DeviceTimeout as exc:
                self._failures[exc.device] += 1

        row = TraceRow(sample.t, sample.p_net_kw, sample.p_ev_kw, sample.soc_pct,
                       self.mode.name, self._last_written if self._last_written is not None else 0.0)
        self.trace.append(row)
        with self._lock:
            subs = list(self._subscribers)
        for q in subs:
            try:
                q.put_nowait(row)
            except queue.Full:
                pass
        return sample

    def dispatch_failsafe(self) -> None:
        """Force the charger to zero after a communication escalation."""
        sp = wire.CHARGER_MAP.entry("setpoint")
        try:
            self.charger.write(sp.address, wire.codec_power(0.0),
                               unit_id=wire.CHARGER_UNIT_ID)
        except (wire.WireError, OSError) as exc:
            raise DeviceTimeout("charger", exc) from exc
        self._last_written = 0.0
        self._failsafe_pending = False
        self.command_log.append(CommandRecord(self.time_fn(), 0.0, "idle"))

    def run_forever(self) -> None:
        """Wall-clock driver: one cycle every 1/sample_hz seconds."""
        period = 1.0 / self.config.sample_hz
        next_due = time.monotonic()
        while not self._stop.is_set():
            self.cycle()
            next_due += period
            delay = next_due - time.monotonic()
            if delay > 0:
                self._stop.wait(delay)
            else:
                next_due = time.monotonic()

    def stop(self) -> None:
        self._stop.set()

    def close(self) -> None:
        self.stop()
        self.meter.close()
        self.charger.close()
        self.trace.close()


def _mode_params(mode: ControlMode) -> dict:
    if isinstance(mode, Manual):
        return {"setpoint_kw": mode.setpoint_kw}
    if isinstance(mode, ZeroExport):
        return {"alpha_kw": mode.alpha_kw}
    if isinstance(mode, Arbitrage):
        return {"soc_floor_pct": mode.soc_floor_pct, "soc_ceiling_pct": mode.soc_ceiling_pct}
    if isinstance(mode, DemandResponse):
        return {"start": mode.event.start, "end": mode.event.end,
                "requested_kw": mode.event.requested_kw}
    return {}


class LockstepDriver:
    """Drives a Simulation and an Engine on one logical thread: advance the
    simulated clock by one sample period, then run one control cycle.
    Deterministic for a fixed scenario and seed."""

    def __init__(self, sim, engine: Engine):
        self.sim = sim
        self.engine = engine
        period = 1.0 / engine.config.sample_hz
        ticks = period / sim.clock.step_s
        if abs(ticks - round(ticks)) > 1e-9:
            raise ValueError(f"sample period {period}s is not a whole number of "
                             f"{sim.clock.step_s}s ticks")
        self.ticks_per_cycle = round(ticks)

    def run(self, seconds: float) -> None:
        cycles = round(seconds * self.engine.config.sample_hz)
        for _ in range(cycles):
            self.sim.tick(self.ticks_per_cycle)
            self.engine.cycle()


def lockstep(sim, config: EngineConfig | None = None, **overrides) -> tuple[Engine, LockstepDriver]:
    """Wire an engine to an embedded simulation on the simulated clock."""
    cfg = config or EngineConfig()
    cfg.meter = sim.meter_endpoint
    cfg.charger = sim.charger_endpoint
    for k, v in overrides.items():
        setattr(cfg, k, v)
    eng = Engine(cfg, time_fn=lambda: sim.clock.now, tod_fn=sim.clock.tod)
    return eng, LockstepDriver(sim, eng)
