"""CLI surface: subcommands, exit codes, report rendering."""
import json
import signal
import subprocess
import sys
import time
from importlib import resources

import pytest

from evderms.cli import main

GOLDEN = resources.files("evderms").joinpath("data/golden_load_follow.csv")


def test_usage_error_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 2


def test_test_sweep_json(capsys):
    assert main(["test", "sweep", "--format", "json"]) == 0
    out = capsys.readouterr().out
    payload = json.loads(out[:out.index("\n[")])
    assert len(payload["rows"]) == 6
    assert "[PASS]" in out and "[FAIL]" not in out


def test_report_load_follow_golden(capsys):
    assert main(["report", str(GOLDEN), "--kind", "load-follow"]) == 0
    out = capsys.readouterr().out
    assert "House Load" in out
    assert "6.91" in out and "-4.37" in out and "2.53" in out
    assert "coverage 68%" in out


def test_report_arbitrage_from_trace(tmp_path, capsys):
    rows = ["t,p_net_kw,p_ev_kw,soc_pct,mode,setpoint_kw"]
    for i in range(1440):
        t = i * 60.0
        ev = -5.0 if 11 * 3600 <= t < 13 * 3600 else (5.0 if t >= 19 * 3600 and t < 21 * 3600 else 0.0)
        rows.append(f"{t:.3f},{ev:.6f},{ev:.6f},50.0,arbitrage,{ev:.6f}")
    trace = tmp_path / "day.csv"
    trace.write_text("\n".join(rows) + "\n")
    assert main(["report", str(trace), "--kind", "arbitrage", "--format", "json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["revenue"] == pytest.approx(0.88, abs=1e-6)


def test_run_without_simulator_fails_cleanly(capsys):
    code = main(["run", "--mode", "zero-export", "--alpha", "0.1",
                 "--meter", "127.0.0.1:9", "--charger", "127.0.0.1:9"])
    assert code == 1
    err = capsys.readouterr().err
    assert "unreachable" in err


def test_sim_subcommand_serves_and_stops():
    proc = subprocess.Popen(
        [sys.executable, "-u", "-m", "evderms.cli", "sim", "--scenario", "sweepTest",
         "--meter-port", "0", "--charger-port", "0", "--scale", "100"],
        stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)
    try:
        lines = [proc.stdout.readline() for _ in range(3)]
        assert any("meter" in l for l in lines)
        assert any("charger" in l for l in lines)
        time.sleep(0.3)
        assert proc.poll() is None
    finally:
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(timeout=5) == 0


def test_scenario_parse_error_exit_1(tmp_path, capsys):
    bad = tmp_path / "broken.ini"
    bad.write_text("[clock]\nstep_s = fast\n")
    assert main(["sim", "--scenario", str(bad)]) == 1
    assert "step_s" in capsys.readouterr().err
