"""Time-stepped simulation of the EV battery, bidirectional charger, smart
meter, and scheduled household appliances, exposed through register servers.

All device models advance on one simulated clock. The clock can be scaled
(N simulated seconds per wall second) or free-run, so the ~109 s charge
negotiation and the five-hour load-following day both run at desk scale.
"""
from __future__ import annotations

import configparser
import random
import threading
import time
from dataclasses import dataclass, field
from enum import IntEnum
from importlib import resources
from pathlib import Path

from . import wire

GRID_VOLTAGE = 240.0  # nominal AC service voltage for the current register


class ParseError(Exception):
    """Scenario file rejected; message names the offending section/field."""


class ChargerState(IntEnum):
    DISCONNECTED = 0
    NEGOTIATING = 1
    READY = 2
    TRACKING = 3
    FAULT = 4


@dataclass
class SimClock:
    """Simulated time source shared by every device model.

    scale is simulated seconds per wall second; 0 means free-run as fast
    as possible (the test harness default). Time is counted in whole ticks
    so timestamps do not accumulate float error.
    """

    step_s: float = 0.05
    scale: float = 0.0
    start_tod_s: float = 0.0  # time-of-day at now == 0, for tariff lookups
    ticks: int = 0

    @property
    def now(self) -> float:
        return self.ticks * self.step_s

    def advance(self) -> None:
        self.ticks += 1

    def tod(self) -> float:
        return (self.start_tod_s + self.now) % 86400.0


@dataclass
class BatteryModel:
    """EV battery: SOC bookkeeping, affine voltage law, one-way efficiencies."""

    capacity_kwh: float = 40.0
    soc_pct: float = 50.0
    soc_min_pct: float = 20.0
    v0: float = 350.0        # volts at 0% SOC
    k_v: float = 0.5         # volts per SOC point; 375 V at 50%
    eta_chg: float = 0.95
    eta_dis: float = 0.95

    def dc_voltage(self) -> float:
        return self.v0 + self.k_v * self.soc_pct

    def bound_power(self, p_ac_kw: float, dt: float) -> float:
        """Limit AC-side power so SOC stays within [soc_min, 100] this step."""
        if p_ac_kw > 0:
            headroom = (100.0 - self.soc_pct) * 36.0 * self.capacity_kwh
            return min(p_ac_kw, headroom / (self.eta_chg * dt))
        if p_ac_kw < 0:
            available = (self.soc_pct - self.soc_min_pct) * 36.0 * self.capacity_kwh
            return max(p_ac_kw, -available * self.eta_dis / dt)
        return 0.0

    def integrate(self, p_ac_kw: float, dt: float) -> None:
        # charging stores p*eta, discharging drains p/eta (DC side)
        if p_ac_kw > 0:
            self.soc_pct += p_ac_kw * self.eta_chg * dt / (36.0 * self.capacity_kwh)
        elif p_ac_kw < 0:
            self.soc_pct += (p_ac_kw / self.eta_dis) * dt / (36.0 * self.capacity_kwh)


@dataclass
class ChargerModel:
    """Bidirectional charger dynamics: negotiation dead window on the first
    run command, per-command dead time, rate-limited ramp, and a power clamp
    from the DC current limit.

    The negotiation window ends with the output already at its first target:
    the field figure for the initial acquisition folds the command latency
    and ramp into one number, so the model treats t_negotiate_s as
    time-to-first-target.
    """

    nameplate_kw: float = 7.4
    i_dc_max_a: float = 17.0
    t_negotiate_s: float = 109.32
    dead_time_s: float = 5.5
    ramp_kw_per_s: float = 4.0
    noise_sigma_kw: float = 0.005
    state: ChargerState = ChargerState.DISCONNECTED
    setpoint_kw: float = 0.0   # last command that has cleared its dead time
    p_ev_kw: float = 0.0       # true AC power, charging positive

    _remote: bool = field(default=False, repr=False)
    _run: bool = field(default=False, repr=False)
    _pending: list = field(default_factory=list, repr=False)  # (t_effective, kw)
    _negotiate_until: float = field(default=0.0, repr=False)
    _acquired: bool = field(default=False, repr=False)

    def clamp_kw(self, battery: BatteryModel) -> float:
        return min(self.nameplate_kw, battery.dc_voltage() * self.i_dc_max_a / 1000.0)

    def command_remote(self, enable: bool) -> None:
        self._remote = enable

    def command_run(self, run: bool, now: float) -> None:
        if not self._remote or self.state == ChargerState.FAULT:
            return
        if run:
            if self.state == ChargerState.DISCONNECTED:
                self.state = ChargerState.NEGOTIATING
                self._negotiate_until = now + self.t_negotiate_s
            elif self.state == ChargerState.READY:
                self.state = ChargerState.TRACKING
            self._run = True
        else:
            self._run = False

    def command_setpoint(self, kw: float, now: float) -> None:
        if not self._remote or self.state == ChargerState.FAULT:
            return
        self._pending.append((now + self.dead_time_s, kw))

    def _latch_pending(self, upto: float) -> None:
        while self._pending and self._pending[0][0] <= upto + 1e-9:
            self.setpoint_kw = self._pending.pop(0)[1]

    def step(self, battery: BatteryModel, now: float, dt: float) -> None:
        """Advance the charger and battery over [now, now + dt]."""
        if self.state == ChargerState.FAULT:
            self.p_ev_kw = 0.0
            return
        if not (battery.soc_min_pct - 1e-6 <= battery.soc_pct <= 100.0 + 1e-6):
            self.state = ChargerState.FAULT
            self.p_ev_kw = 0.0
            return

        if self.state == ChargerState.NEGOTIATING:
            self.p_ev_kw = 0.0
            if now + dt >= self._negotiate_until - 1e-9:
                self.state = ChargerState.READY
            return

        self._latch_pending(now)

        if self.state == ChargerState.READY and self._run:
            self.state = ChargerState.TRACKING
            if not self._acquired:
                # initial acquisition: negotiation consumed the transient
                self._acquired = True
                target = self._effective_target(battery, dt)
                self.p_ev_kw = target
                battery.integrate(self.p_ev_kw, dt)
                return

        target = self._effective_target(battery, dt)
        delta = target - self.p_ev_kw
        max_step = self.ramp_kw_per_s * dt
        self.p_ev_kw += max(-max_step, min(max_step, delta))
        # SOC floor/ceiling is a protection cut, not a ramped quantity
        self.p_ev_kw = battery.bound_power(self.p_ev_kw, dt)
        battery.integrate(self.p_ev_kw, dt)
        if not self._run and self.state == ChargerState.TRACKING and abs(self.p_ev_kw) < 1e-9:
            self.state = ChargerState.READY

    def _effective_target(self, battery: BatteryModel, dt: float) -> float:
        if not (self._run and self.state == ChargerState.TRACKING):
            target = 0.0
        else:
            limit = self.clamp_kw(battery)
            target = max(-limit, min(limit, self.setpoint_kw))
        return battery.bound_power(target, dt)


def charger_step(charger: ChargerModel, battery: BatteryModel, dt: float,
                 now: float = 0.0) -> tuple[ChargerModel, BatteryModel]:
    """Advance one tick; mutates and returns the models."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    charger.step(battery, now, dt)
    return charger, battery


@dataclass(frozen=True)
class ApplianceProfile:
    """One scheduled appliance: a piecewise-constant power trace, tiled over
    its runtime window."""

    name: str
    start_s: float
    duration_min: float
    segments: tuple[tuple[float, float], ...]  # (seconds, kW), repeated

    def __post_init__(self):
        if not self.segments:
            raise ValueError(f"appliance {self.name}: empty power trace")
        if any(d <= 0 or kw < 0 for d, kw in self.segments):
            raise ValueError(f"appliance {self.name}: trace durations must be "
                             "positive and power non-negative")

    @property
    def cycle_s(self) -> float:
        return sum(d for d, _ in self.segments)

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_min * 60.0

    def power_at(self, t: float) -> float:
        if not self.start_s <= t < self.end_s:
            return 0.0
        tau = (t - self.start_s) % self.cycle_s
        for d, kw in self.segments:
            if tau < d:
                return kw
            tau -= d
        return self.segments[-1][1]

    def energy_kwh(self) -> float:
        """Exact integral of the tiled trace over the runtime window."""
        run_s = self.duration_min * 60.0
        cycle = self.cycle_s
        per_cycle = sum(d * kw for d, kw in self.segments)
        full, rem = divmod(run_s, cycle)
        e = full * per_cycle
        for d, kw in self.segments:
            if rem <= 0:
                break
            e += min(d, rem) * kw
            rem -= d
        return e / 3600.0


@dataclass
class HouseModel:
    base_load_kw: float = 0.13
    appliances: list[ApplianceProfile] = field(default_factory=list)

    def load_at(self, t: float) -> float:
        return self.base_load_kw + sum(a.power_at(t) for a in self.appliances)

    def total_energy_kwh(self, horizon_s: float) -> float:
        return (self.base_load_kw * horizon_s / 3600.0
                + sum(a.energy_kwh() for a in self.appliances))


def house_load(model: HouseModel, t: float) -> float:
    return model.load_at(t)


def meter_read(house: HouseModel, charger: ChargerModel, t: float) -> float:
    """Net power at the point of common coupling, import positive."""
    return house.load_at(t) + charger.p_ev_kw


# ---------------------------------------------------------------------------
# Scenario files
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    name: str
    clock: SimClock
    battery: BatteryModel
    charger: ChargerModel
    house: HouseModel
    seed: int = 1

    @property
    def horizon_s(self) -> float:
        ends = [a.end_s for a in self.house.appliances]
        return max(ends) if ends else 0.0


def _parse_tod(text: str) -> float:
    try:
        hh, mm = text.strip().split(":")
        return int(hh) * 3600.0 + int(mm) * 60.0
    except Exception:
        raise ParseError(f"[clock] start_tod: expected HH:MM, got {text!r}") from None


def _parse_segments(name: str, text: str) -> tuple[tuple[float, float], ...]:
    segments = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            dur, kw = part.split(":")
            segments.append((float(dur), float(kw)))
        except ValueError:
            raise ParseError(f"[appliance {name}] trace: bad segment {part!r}, "
                             "expected seconds:kw") from None
    return tuple(segments)


def _get(parser: configparser.ConfigParser, section: str, key: str,
         cast, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        return cast(raw)
    except ValueError:
        raise ParseError(f"[{section}] {key}: cannot parse {raw!r}") from None


def scenario_load(source: str | Path) -> Scenario:
    """Load a scenario by bundled name (stepTest, sweepTest, table3, touDay)
    or filesystem path."""
    name = str(source)
    if Path(name).exists():
        path = Path(name)
        text = path.read_text()
        name = path.stem
    else:
        ref = resources.files("evderms").joinpath(f"scenarios/{name}.ini")
        if not ref.is_file():
            raise ParseError(f"no scenario file or bundled scenario named {source!r}")
        text = ref.read_text()

    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ParseError(f"scenario syntax error: {e}") from None

    clock = SimClock(
        step_s=_get(parser, "clock", "step_s", float, 0.05),
        scale=_get(parser, "clock", "scale", float, 0.0),
        start_tod_s=_parse_tod(parser.get("clock", "start_tod"))
        if parser.has_option("clock", "start_tod") else 0.0,
    )
    if clock.step_s <= 0:
        raise ParseError("[clock] step_s: must be positive")
    if clock.scale < 0:
        raise ParseError("[clock] scale: must be >= 0 (0 means free-run)")

    battery = BatteryModel(
        capacity_kwh=_get(parser, "battery", "capacity_kwh", float, 40.0),
        soc_pct=_get(parser, "battery", "soc_pct", float, 50.0),
        soc_min_pct=_get(parser, "battery", "soc_min_pct", float, 20.0),
        v0=_get(parser, "battery", "v0", float, 350.0),
        k_v=_get(parser, "battery", "k_v", float, 0.5),
        eta_chg=_get(parser, "battery", "eta_chg", float, 0.95),
        eta_dis=_get(parser, "battery", "eta_dis", float, 0.95),
    )
    if not battery.soc_min_pct <= battery.soc_pct <= 100.0:
        raise ParseError("[battery] soc_pct: must lie in [soc_min_pct, 100]")
    if not (0 < battery.eta_chg <= 1 and 0 < battery.eta_dis <= 1):
        raise ParseError("[battery] eta_chg/eta_dis: must lie in (0, 1]")

    state_name = _get(parser, "charger", "state", str, "disconnected").strip().upper()
    try:
        state = ChargerState[state_name]
    except KeyError:
        raise ParseError(f"[charger] state: unknown state {state_name!r}") from None
    charger = ChargerModel(
        nameplate_kw=_get(parser, "charger", "nameplate_kw", float, 7.4),
        i_dc_max_a=_get(parser, "charger", "i_dc_max_a", float, 17.0),
        t_negotiate_s=_get(parser, "charger", "t_negotiate_s", float, 109.32),
        dead_time_s=_get(parser, "charger", "dead_time_s", float, 5.5),
        ramp_kw_per_s=_get(parser, "charger", "ramp_kw_per_s", float, 4.0),
        noise_sigma_kw=_get(parser, "charger", "noise_sigma_kw", float, 0.005),
        state=state,
    )
    if state == ChargerState.READY:
        # pre-negotiated session: later run commands track without the dead window
        charger._acquired = True

    house = HouseModel(base_load_kw=_get(parser, "house", "base_load_kw", float, 0.13))
    if house.base_load_kw < 0:
        raise ParseError("[house] base_load_kw: must be non-negative")

    for section in parser.sections():
        if not section.startswith("appliance "):
            continue
        app_name = section[len("appliance "):].strip()
        start_min = _get(parser, section, "start_min", float, None)
        duration_min = _get(parser, section, "duration_min", float, None)
        if start_min is None or duration_min is None:
            raise ParseError(f"[{section}] start_min and duration_min are required")
        if duration_min <= 0:
            raise ParseError(f"[{section}] duration_min: must be positive")
        if parser.has_option(section, "trace"):
            segments = _parse_segments(app_name, parser.get(section, "trace"))
        elif parser.has_option(section, "power_kw"):
            segments = ((duration_min * 60.0, _get(parser, section, "power_kw", float, 0.0)),)
        else:
            raise ParseError(f"[{section}] needs power_kw or trace")
        try:
            profile = ApplianceProfile(app_name, start_min * 60.0, duration_min, segments)
        except ValueError as e:
            raise ParseError(f"[{section}] {e}") from None
        house.appliances.append(profile)
    house.appliances.sort(key=lambda a: a.start_s)

    return Scenario(name=name, clock=clock, battery=battery, charger=charger,
                    house=house, seed=_get(parser, "charger", "seed", int, 1))


# ---------------------------------------------------------------------------
# Simulation: models + register servers on one tick loop
# ---------------------------------------------------------------------------

class Simulation:
    """Owns the models, the clock, and the meter/charger register servers.

    The caller drives ticks (lockstep test mode) or start_paced() runs them
    on a thread honoring clock.scale. Writes landing over the wire are
    queued and applied at the next tick boundary; measurement registers are
    republished once per tick.
    """

    def __init__(self, scenario: Scenario, host: str = "127.0.0.1",
                 meter_port: int = 0, charger_port: int = 0,
                 shared_endpoint: bool = False):
        self.scenario = scenario
        self.clock = scenario.clock
        self.battery = scenario.battery
        self.charger = scenario.charger
        self.house = scenario.house
        self.rng = random.Random(scenario.seed)

        self.meter_store = wire.WordStore(wire.METER_MAP)
        self.charger_store = wire.WordStore(wire.CHARGER_MAP)
        self._writes: list[tuple[int, tuple[int, ...]]] = []
        self._writes_lock = threading.Lock()
        self.charger_store.on_write = self._capture_write

        if shared_endpoint:
            # gateway style: both units behind one endpoint, so a poll can
            # pipeline its reads through a single connection
            self.meter_server = wire.serve_units(
                {wire.METER_UNIT_ID: self.meter_store,
                 wire.CHARGER_UNIT_ID: self.charger_store}, host, meter_port)
            self.charger_server = self.meter_server
        else:
            self.meter_server = wire.serve_registers(
                wire.METER_MAP, self.meter_store, host, meter_port, wire.METER_UNIT_ID)
            self.charger_server = wire.serve_registers(
                wire.CHARGER_MAP, self.charger_store, host, charger_port, wire.CHARGER_UNIT_ID)
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._publish()

    @property
    def meter_endpoint(self) -> tuple[str, int]:
        return self.meter_server.server_address

    @property
    def charger_endpoint(self) -> tuple[str, int]:
        return self.charger_server.server_address

    def _capture_write(self, start: int, words: tuple[int, ...]) -> None:
        with self._writes_lock:
            self._writes.append((start, words))

    def _apply_writes(self) -> None:
        with self._writes_lock:
            writes, self._writes = self._writes, []
        now = self.clock.now
        remote = wire.CHARGER_MAP.entry("remote_enable").address
        run = wire.CHARGER_MAP.entry("run_command").address
        sp = wire.CHARGER_MAP.entry("setpoint").address
        for start, words in writes:
            # route only whole-entry writes into model commands
            if start == remote and len(words) >= 1:
                self.charger.command_remote(bool(words[0]))
                words = words[1:]
                start += 1
            if start == run and len(words) >= 1:
                self.charger.command_run(bool(words[0]), now)
                words = words[1:]
                start += 1
            if start == sp and len(words) >= 2:
                self.charger.command_setpoint(wire.power_from_words(words[0], words[1]), now)

    def tick(self, n: int = 1) -> None:
        for _ in range(n):
            if self._writes:
                self._apply_writes()
            t0 = self.clock.now
            self.charger.step(self.battery, t0, self.clock.step_s)
            self.clock.advance()
            self._publish()

    def _publish(self) -> None:
        t = self.clock.now
        p_ev = self.charger.p_ev_kw
        p_net = self.house.load_at(t) + p_ev
        raw_p = round(p_net * 1000) & 0xFFFFFFFF
        raw_i = round(p_net * 1e6 / GRID_VOLTAGE) & 0xFFFFFFFF
        self.meter_store.set_words({
            0x0000: raw_p >> 16, 0x0001: raw_p & 0xFFFF,
            0x0002: raw_i >> 16, 0x0003: raw_i & 0xFFFF,
        })
        measured = p_ev
        if self.charger.noise_sigma_kw > 0:
            measured += self.rng.gauss(0.0, self.charger.noise_sigma_kw)
        raw_ev = round(measured * 1000) & 0xFFFFFFFF
        soc = self.battery.soc_pct
        self.charger_store.set_words({
            0x0104: raw_ev >> 16, 0x0105: raw_ev & 0xFFFF,
            0x0106: round(min(100.0, max(0.0, soc)) * 10),
            0x0107: int(self.charger.state),
            0x0108: round(self.battery.dc_voltage() * 10),
        })

    def start_paced(self) -> None:
        """Run ticks on a thread: paced by clock.scale, or flat out at 0."""
        def loop():
            wall0 = time.monotonic()
            sim0 = self.clock.now
            while not self._stop.is_set():
                self.tick()
                if self.clock.scale > 0:
                    due = wall0 + (self.clock.now - sim0) / self.clock.scale
                    delay = due - time.monotonic()
                    if delay > 0:
                        time.sleep(delay)
        self._thread = threading.Thread(target=loop, daemon=True)
        self._thread.start()

    def close(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
        self.meter_server.close()
        if self.charger_server is not self.meter_server:
            self.charger_server.close()

    def __enter__(self) -> "Simulation":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
