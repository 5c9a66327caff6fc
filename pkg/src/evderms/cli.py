"""Command-line entry point: launch the simulator, run the engine in any
control mode, execute the benchmark tests, or re-render a saved trace.

Endpoints and the log path can also come from the environment:
EVDERMS_METER, EVDERMS_CHARGER, EVDERMS_API_PORT, EVDERMS_LOG.
"""
from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import threading

from . import api, bench, devsim, engine, wire


def _endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    try:
        return (host or "127.0.0.1", int(port))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}") from None


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evderms",
        description="Bidirectional EV charger simulator, DERMS engine, and test harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("sim", help="serve the simulated meter and charger")
    p_sim.add_argument("--scenario", default="stepTest",
                       help="bundled name or path (default: stepTest)")
    p_sim.add_argument("--scale", type=float, default=None,
                       help="simulated seconds per wall second; 0 = free-run")
    p_sim.add_argument("--meter-port", type=int, default=wire.DEFAULT_METER_PORT)
    p_sim.add_argument("--charger-port", type=int, default=wire.DEFAULT_CHARGER_PORT)
    p_sim.add_argument("--host", default="127.0.0.1")

    p_run = sub.add_parser("run", help="run the control engine and its API")
    p_run.add_argument("--mode", default="idle",
                       choices=["idle", "manual", "zero-export", "arbitrage", "dr"])
    p_run.add_argument("--setpoint", type=float, default=0.0, help="manual mode kW")
    p_run.add_argument("--alpha", type=float, default=0.3, help="zero-export tolerance kW")
    p_run.add_argument("--soc-floor", type=float, default=25.0)
    p_run.add_argument("--soc-ceiling", type=float, default=90.0)
    p_run.add_argument("--dr-start", type=float, default=0.0, help="epoch seconds")
    p_run.add_argument("--dr-end", type=float, default=0.0)
    p_run.add_argument("--dr-kw", type=float, default=0.0)
    p_run.add_argument("--meter", type=_endpoint,
                       default=os.environ.get("EVDERMS_METER", f"127.0.0.1:{wire.DEFAULT_METER_PORT}"))
    p_run.add_argument("--charger", type=_endpoint,
                       default=os.environ.get("EVDERMS_CHARGER", f"127.0.0.1:{wire.DEFAULT_CHARGER_PORT}"))
    p_run.add_argument("--hz", type=float, default=5.0)
    p_run.add_argument("--log", default=os.environ.get("EVDERMS_LOG"))
    p_run.add_argument("--api-port", type=int,
                       default=int(os.environ.get("EVDERMS_API_PORT", "8800")))
    p_run.add_argument("--panel-dir", default=None,
                       help="serve a built web panel from this directory")
    p_run.add_argument("--token", default=None, help="static API token for POSTs")

    p_test = sub.add_parser("test", help="run a field experiment hermetically")
    p_test.add_argument("kind", choices=["step", "sweep", "arbitrage", "load-follow", "all"])
    p_test.add_argument("--format", choices=["text", "csv", "json"], default="text")
    p_test.add_argument("--trials", type=int, default=3, help="step test trials")
    p_test.add_argument("--alpha", type=float, default=0.1, help="load-follow tolerance kW")

    p_rep = sub.add_parser("report", help="re-render a saved trace")
    p_rep.add_argument("trace", help="trace file (.csv or .jsonl)")
    p_rep.add_argument("--kind", required=True, choices=["arbitrage", "load-follow"])
    p_rep.add_argument("--format", choices=["text", "csv", "json"], default="text")
    p_rep.add_argument("--scenario", default="table3",
                       help="scenario for load-follow itemization")
    p_rep.add_argument("--alpha", type=float, default=0.1)
    p_rep.add_argument("--start-tod", default="00:00",
                       help="time of day at trace t=0, HH:MM")
    return parser


def _emit(report, fmt: str) -> None:
    if fmt == "text":
        print(report.to_text())
    elif fmt == "csv":
        print(report.to_csv())
    else:
        print(json.dumps(report.to_json(), indent=2))


def _print_checks(checks) -> bool:
    ok = True
    for name, passed, detail in checks:
        print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
        ok &= passed
    return ok


def cmd_sim(args) -> int:
    scenario = devsim.scenario_load(args.scenario)
    if args.scale is not None:
        scenario.clock.scale = args.scale
    sim = devsim.Simulation(scenario, host=args.host,
                            meter_port=args.meter_port, charger_port=args.charger_port)
    print(f"meter    unit {wire.METER_UNIT_ID} at {sim.meter_endpoint[0]}:{sim.meter_endpoint[1]}",
          flush=True)
    print(f"charger  unit {wire.CHARGER_UNIT_ID} at {sim.charger_endpoint[0]}:{sim.charger_endpoint[1]}",
          flush=True)
    print(f"scenario {scenario.name!r}, step {scenario.clock.step_s}s, "
          f"scale {scenario.clock.scale or 'free-run'}", flush=True)
    sim.start_paced()
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *a: stop.set())
    signal.signal(signal.SIGTERM, lambda *a: stop.set())
    stop.wait()
    sim.close()
    return 0


def cmd_run(args) -> int:
    config = engine.EngineConfig(sample_hz=args.hz, alpha_kw=args.alpha,
                                 meter=args.meter, charger=args.charger,
                                 log_path=args.log, api_token=args.token)
    eng = engine.Engine(config)
    if args.mode == "manual":
        eng.set_mode(engine.Manual(args.setpoint))
    elif args.mode == "zero-export":
        eng.set_mode(engine.ZeroExport(args.alpha))
    elif args.mode == "arbitrage":
        eng.set_mode(engine.Arbitrage(engine.ontario_summer_2022(),
                                      args.soc_floor, args.soc_ceiling))
    elif args.mode == "dr":
        eng.set_mode(engine.DemandResponse(
            engine.DrEvent(args.dr_start, args.dr_end, args.dr_kw)))
    try:
        eng.take_control()
    except engine.DeviceTimeout as e:
        print(f"error: {e}", file=sys.stderr)
        print("is the simulator (or charger) up and reachable?", file=sys.stderr)
        return 1
    server = api.serve_api(eng, port=args.api_port, panel_dir=args.panel_dir,
                           token=args.token)
    print(f"engine up: mode {args.mode}, api http://127.0.0.1:{server.port}/state")
    signal.signal(signal.SIGINT, lambda *a: eng.stop())
    signal.signal(signal.SIGTERM, lambda *a: eng.stop())
    eng.run_forever()
    server.close()
    eng.close()
    return 0


def cmd_test(args) -> int:
    ok = True
    kinds = ["step", "sweep", "arbitrage", "load-follow"] if args.kind == "all" else [args.kind]
    for kind in kinds:
        if kind == "step":
            plan = bench.StepTestPlan(trials=args.trials)
            report = bench.run_step_test(plan)
            checks = bench.check_step(report)
        elif kind == "sweep":
            report = bench.run_sweep_test()
            checks = bench.check_sweep(report)
        elif kind == "arbitrage":
            report = bench.run_arbitrage_test()
            checks = bench.check_arbitrage(report)
        else:
            report = bench.run_load_follow_test(alpha_kw=args.alpha)
            checks = bench.check_load_follow(report)
        _emit(report, args.format)
        if args.format == "text":
            print()
        ok &= _print_checks(checks)
    return 0 if ok else 1


def cmd_report(args) -> int:
    rows = engine.load_trace(args.trace)
    if args.kind == "arbitrage":
        anchor = devsim._parse_tod(args.start_tod)
        report = bench.arbitrage_report(rows, engine.ontario_summer_2022(),
                                        tod_of=lambda t: (anchor + t) % 86400.0)
    else:
        scenario = devsim.scenario_load(args.scenario)
        report = bench.load_follow_report(rows, scenario, alpha_kw=args.alpha)
    _emit(report, args.format)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "sim":
            return cmd_sim(args)
        if args.command == "run":
            return cmd_run(args)
        if args.command == "test":
            return cmd_test(args)
        return cmd_report(args)
    except (devsim.ParseError, bench.ScenarioMismatch, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
