#!/usr/bin/env python3
"""Replay all four field experiments on the embedded simulator and write the
reports (text + CSV) under reports/.

Usage: python3 scripts/replay_experiments.py [--out DIR]
"""
import argparse
import sys
from pathlib import Path

from evderms import bench


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="reports", help="output directory")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    runs = [
        ("step", lambda: bench.run_step_test(), bench.check_step),
        ("sweep", lambda: bench.run_sweep_test(), bench.check_sweep),
        ("arbitrage", lambda: bench.run_arbitrage_test(), bench.check_arbitrage),
        ("load_follow", lambda: bench.run_load_follow_test(), bench.check_load_follow),
    ]
    all_ok = True
    for name, run, check in runs:
        print(f"== {name} ==")
        report = run()
        print(report.to_text())
        (out / f"{name}.txt").write_text(report.to_text() + "\n")
        (out / f"{name}.csv").write_text(report.to_csv() + "\n")
        for crit, ok, detail in check(report):
            print(f"[{'PASS' if ok else 'FAIL'}] {crit}: {detail}")
            all_ok &= ok
        print()
    print(f"reports written to {out}/")
    return 0 if all_ok else 1


if __name__ == "__main__":
    sys.exit(main())
