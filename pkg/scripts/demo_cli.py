#!/usr/bin/env python3
"""
Lookdown Demo CLI
Walks through the command line end to end on small settings: simulate a
Moran model, export its genealogies, check the Poisson identities and run a
verification suite.
"""

import argparse
import json
import os
import sys
import tempfile

sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from commands.console import print_error, print_header, print_step, print_success
from config import EXIT_OK, RUN_FILES
from main import main as cli

DEMO_CONFIG = {
    "model": {"name": "demo-moran", "preset": "moran", "params": {"N": 30, "gamma": 1.0}},
    "engine": {"t_end": 3.0, "snapshots": [1.0, 2.0], "seed": 42, "replicates": 4, "workers": 1},
}

TOTAL_STEPS = 4


def step_simulate(work_dir: str) -> str:
    print_step(1, TOTAL_STEPS, "Simulating a 30-particle Moran model")
    config_path = os.path.join(work_dir, "moran.json")
    with open(config_path, "w", encoding="utf-8") as handle:
        json.dump(DEMO_CONFIG, handle, indent=2)
    run_dir = os.path.join(work_dir, "moran-run")
    code = cli(["simulate", "--config", config_path, "--out", run_dir])
    if code != EXIT_OK:
        raise RuntimeError(f"simulate exited with {code}")
    with open(os.path.join(run_dir, RUN_FILES["summary"]), "r", encoding="utf-8") as handle:
        summary = json.load(handle)
    print_success("Run summary", {entry["replicate"]: entry["event_counts"] for entry in summary["replicates"]})
    return run_dir


def step_genealogy(run_dir: str):
    print_step(2, TOTAL_STEPS, "Exporting genealogies of the 5 lowest levels")
    code = cli(["genealogy", run_dir, "--n", "5"])
    if code != EXIT_OK:
        raise RuntimeError(f"genealogy exited with {code}")
    with open(os.path.join(run_dir, RUN_FILES["newick"]), "r", encoding="utf-8") as handle:
        print(handle.readline().strip())


def step_identities(work_dir: str) -> int:
    print_step(3, TOTAL_STEPS, "Checking Poisson random measure identities")
    return cli(["identities", "--reps", "5000", "--out", os.path.join(work_dir, "identities")])


def step_verify(work_dir: str, suite: str) -> int:
    print_step(4, TOTAL_STEPS, f"Running the '{suite}' suite")
    return cli(["verify", suite, "--reps", "300", "--workers", "1", "--out", os.path.join(work_dir, "verify")])


def main():
    parser = argparse.ArgumentParser(description="Lookdown demo")
    parser.add_argument("--suite", default="generator", help="Suite run in the last step")
    parser.add_argument("--keep", help="Keep outputs in this directory instead of a temporary one")
    args = parser.parse_args()

    print_header("Lookdown Simulator Demo")
    work_dir = args.keep or tempfile.mkdtemp(prefix="lookdown-demo-")
    os.makedirs(work_dir, exist_ok=True)
    try:
        run_dir = step_simulate(work_dir)
        step_genealogy(run_dir)
        codes = [step_identities(work_dir), step_verify(work_dir, args.suite)]
    except RuntimeError as e:
        print_error(str(e))
        return 1
    print_header("Demo complete")
    print(f"Outputs in {work_dir}")
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
