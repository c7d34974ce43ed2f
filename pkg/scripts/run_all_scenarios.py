"""Run every scenario in configs/ and print a one-line verdict per file.

Usage: python3 scripts/run_all_scenarios.py [--out DIR]
Exits non-zero if any scenario misses a tolerance or errors out.
"""

import argparse
import sys
from pathlib import Path

from floatbase.harness.config import ConfigError, load_config
from floatbase.harness.experiments import PipelineError, run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=None, help="output directory for traces and reports")
    args = parser.parse_args()
    failures = 0
    for path in sorted((ROOT / "configs").glob("*.ini")):
        try:
            report = run_experiment(load_config(path), args.out)
        except (ConfigError, PipelineError) as exc:
            print(f"ERROR {path.name}: {exc}")
            failures += 1
            continue
        verdict = "PASS" if report.passed else "FAIL"
        failures += not report.passed
        checks = ", ".join(f"{k}={report.metrics[k]:.3g}" for k in report.tolerances)
        print(f"{verdict} {path.name} ({report.runtime_s:.1f} s): {checks}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
