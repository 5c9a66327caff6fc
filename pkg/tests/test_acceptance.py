"""End-to-end acceptance: replays the four field experiments hermetically
(embedded simulator, free-run clock, loopback register servers) and holds
the reports to the published bands, plus the artifact-wide property suite.

Run with -s to see one pass/fail line per criterion.
"""
import itertools
import random

import pytest

from evderms import wire
from evderms.bench import (check_arbitrage, check_load_follow, check_step,
                           check_sweep, run_arbitrage_test, run_load_follow_test,
                           run_step_test, run_sweep_test)
from evderms.devsim import (BatteryModel, ChargerModel, ChargerState,
                            Simulation, scenario_load)
from evderms.engine import (Engine, EngineConfig, Idle, Manual, ZeroExport,
                            lockstep)
from evderms.wire import (Function, RegisterFrame, codec_power, decode_frame,
                          encode_frame, power_from_words)


def assert_checks(title, checks):
    print()
    failed = []
    for name, ok, detail in checks:
        print(f"[{'PASS' if ok else 'FAIL'}] {title}: {name} ({detail})")
        if not ok:
            failed.append(f"{name}: {detail}")
    assert not failed, f"{title}: " + "; ".join(failed)


# -- experiment replays (module-scoped: each runs once) -------------------------

@pytest.fixture(scope="module")
def step_report():
    return run_step_test()


@pytest.fixture(scope="module")
def sweep_report():
    return run_sweep_test()


@pytest.fixture(scope="module")
def arbitrage_result():
    return run_arbitrage_test()


@pytest.fixture(scope="module")
def load_follow_result():
    return run_load_follow_test()


def test_step_test_against_published_table(step_report):
    assert_checks("step", check_step(step_report))


def test_sweep_test_against_published_table(sweep_report):
    assert_checks("sweep", check_sweep(sweep_report))


def test_arbitrage_day(arbitrage_result):
    assert_checks("arbitrage", check_arbitrage(arbitrage_result))


def test_zero_export_load_following(load_follow_result):
    assert_checks("load-follow", check_load_follow(load_follow_result))


# -- property suite --------------------------------------------------------------

def test_wire_roundtrips_ten_thousand_cases():
    """Frame and power-codec round-trips over >= 10^4 randomized cases."""
    rng = random.Random(0xE542)
    failures = 0
    for _ in range(10_000):
        kind = rng.randrange(4)
        txn, unit, addr = rng.randrange(0x10000), rng.randrange(0x100), rng.randrange(0x10000)
        if kind == 0:
            f = RegisterFrame(txn, unit, Function.READ_HOLDING, addr, rng.randint(1, 123))
        elif kind == 1:
            n = rng.randint(1, 123)
            f = RegisterFrame(txn, unit, Function.READ_HOLDING, 0, n,
                              tuple(rng.randrange(0x10000) for _ in range(n)))
        elif kind == 2:
            n = rng.randint(1, 120)
            f = RegisterFrame(txn, unit, Function.WRITE_MULTIPLE, addr, n,
                              tuple(rng.randrange(0x10000) for _ in range(n)))
        else:
            f = RegisterFrame(txn, unit, Function.WRITE_MULTIPLE, addr, rng.randint(1, 120))
        if decode_frame(encode_frame(f)) != f:
            failures += 1
        kw = rng.randint(-2_000_000_000, 2_000_000_000) / 1000.0
        if abs(power_from_words(*codec_power(kw)) - kw) > 1e-12:
            failures += 1
    print(f"\n[{'PASS' if failures == 0 else 'FAIL'}] properties: wire round-trips "
          f"(10000 frames + 10000 codec values, {failures} failures)")
    assert failures == 0


def test_soc_conservation_against_closed_form():
    """Tick integration within 1e-6 percentage points per simulated hour."""
    rng = random.Random(7)
    worst = 0.0
    for _ in range(12):
        p_kw = rng.uniform(-6.3, 6.3)
        hours = rng.uniform(0.1, 1.5)
        b = BatteryModel(soc_pct=60.0)
        steps = round(hours * 3600 / 0.05)
        for _ in range(steps):
            b.integrate(p_kw, 0.05)
        actual_h = steps * 0.05 / 3600.0
        eta = 0.95
        closed = (p_kw * eta if p_kw > 0 else p_kw / eta) * actual_h / 40.0 * 100.0
        worst = max(worst, abs((b.soc_pct - 60.0) - closed) / actual_h)
    print(f"\n[{'PASS' if worst <= 1e-6 else 'FAIL'}] properties: SOC conservation "
          f"(worst {worst:.2e} %/h)")
    assert worst <= 1e-6


def test_clamp_invariant_randomized_schedules():
    """|p_ev| <= min(nameplate, V(soc) * Imax / 1000) at every tick.

    The clamp is evaluated at tick start; 1e-5 kW slack covers the
    within-tick soc drift of the voltage term.
    """
    rng = random.Random(11)
    violations = 0
    for _ in range(6):
        b = BatteryModel(soc_pct=rng.uniform(25.0, 95.0))
        c = ChargerModel(noise_sigma_kw=0.0, state=ChargerState.TRACKING)
        c.command_remote(True)
        c._acquired = True
        c._run = True
        t = 0.0
        for _ in range(40):
            c.command_setpoint(rng.uniform(-9.0, 9.0), t)
            for _ in range(rng.randint(5, 60)):
                c.step(b, t, 0.05)
                t += 0.05
                limit = min(c.nameplate_kw, b.dc_voltage() * c.i_dc_max_a / 1000.0)
                if abs(c.p_ev_kw) > limit + 1e-5:
                    violations += 1
    print(f"\n[{'PASS' if violations == 0 else 'FAIL'}] properties: clamp invariant "
          f"({violations} violations)")
    assert violations == 0


def test_zero_export_fixed_point_noise_off():
    """Constant load, noise off: trailing-10 s mean of P_NET = alpha +/- 0.01."""
    results = []
    for load_kw, alpha in [(0.5, 0.1), (2.0, 0.3), (5.8, 0.1)]:
        scn = scenario_load("sweepTest")
        scn.charger.noise_sigma_kw = 0.0
        scn.house.base_load_kw = load_kw
        with Simulation(scn, shared_endpoint=True) as sim:
            eng, driver = lockstep(sim, EngineConfig(sample_hz=5.0))
            eng.take_control()
            eng.set_mode(ZeroExport(alpha))
            # dead time + full-range ramp + 10 s, with margin
            driver.run(25.0)
            tail = [r.p_net_kw for r in eng.trace.rows if r.t >= 15.0]
            mean = sum(tail) / len(tail)
            results.append((load_kw, alpha, mean, abs(mean - alpha) <= 0.01))
            eng.close()
    ok = all(r[3] for r in results)
    detail = ", ".join(f"L={l}: net {m:.4f} (alpha {a})" for l, a, m, _ in results)
    print(f"\n[{'PASS' if ok else 'FAIL'}] properties: zero-export fixed point ({detail})")
    assert ok


def test_failsafe_zero_after_injected_timeouts():
    """After a device-timeout escalation the last written setpoint is 0."""
    meter_store = wire.WordStore(wire.METER_MAP)
    charger_store = wire.WordStore(wire.CHARGER_MAP)
    meter_srv = wire.serve_registers(wire.METER_MAP, meter_store,
                                     unit_id=wire.METER_UNIT_ID)
    charger_srv = wire.serve_registers(wire.CHARGER_MAP, charger_store,
                                       unit_id=wire.CHARGER_UNIT_ID)
    charger_store.set_value("remote_enable", 1)
    charger_store.set_value("charger_state", float(ChargerState.READY))
    charger_store.set_value("dc_voltage", 375.0)
    clock = itertools.count()
    eng = Engine(EngineConfig(meter=("127.0.0.1", meter_srv.port),
                              charger=("127.0.0.1", charger_srv.port),
                              io_timeout_s=0.3),
                 time_fn=lambda: float(next(clock)))
    try:
        eng.set_mode(Manual(4.0))
        assert eng.cycle() is not None
        assert charger_store.get_value("setpoint") == pytest.approx(4.0)
        meter_srv.close()  # inject the loss
        for _ in range(3):
            eng.cycle()
        eng.cycle()  # failsafe write
        ok = (isinstance(eng.mode, Idle)
              and charger_store.get_value("setpoint") == 0.0
              and eng.command_log[-1].setpoint_kw == 0.0)
        print(f"\n[{'PASS' if ok else 'FAIL'}] properties: fail-safe-to-zero "
              f"(mode {eng.mode.name}, setpoint {charger_store.get_value('setpoint')})")
        assert ok
    finally:
        eng.close()
        charger_srv.close()


def test_deterministic_traces_under_fixed_seed():
    """Identical scenario + seed: bit-identical traces through the full stack."""
    def run_once():
        scn = scenario_load("table3")
        with Simulation(scn, shared_endpoint=True) as sim:
            eng, driver = lockstep(sim, EngineConfig(sample_hz=5.0, alpha_kw=0.1))
            eng.take_control()
            eng.set_mode(ZeroExport(0.1))
            driver.run(45.0)
            rows = list(eng.trace.rows)
            eng.close()
            return rows

    a, b = run_once(), run_once()
    ok = a == b
    print(f"\n[{'PASS' if ok else 'FAIL'}] properties: deterministic traces "
          f"({len(a)} rows compared bit-exactly)")
    assert ok
