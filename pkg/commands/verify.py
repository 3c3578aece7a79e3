"""
Verify Command

Runs a named verification suite and writes reports.csv and summary.json.
The exit code is EXIT_OK only when every report passes.
"""
import csv
import logging
import os
from typing import List, Optional

from commands.console import Colors, print_error, print_header, print_success
from config import (EXIT_CONFIG_ERROR, EXIT_OK, EXIT_TEST_FAILURE, OUTPUT_ROOT, RUN_FILES, VERIFY_SUITES,
                    WORKERS)
from models import RunConfig
from observability import log_config_error, log_export, log_verify_result
from utils.manifest import write_summary
from utils.stats import REPORT_HEADER, TestReport
from utils.suites import SuiteSettings, run_suite
from validation import ConfigurationError, apply_overrides, load_run_config

logger = logging.getLogger(__name__)


def write_reports(path: str, reports: List[TestReport]) -> int:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(REPORT_HEADER)
        for report in reports:
            writer.writerow(report.row())
    log_export("reports", path, len(reports))
    return len(reports)


def settings_from(config: RunConfig, adversarial: bool = False) -> SuiteSettings:
    return SuiteSettings(
        reps=config.verify.reps,
        seed=config.engine.seed,
        workers=config.engine.workers or WORKERS,
        adversarial=adversarial or config.verify.adversarial,
        tolerance=config.verify.tolerance,
        delta=config.verify.delta,
        times=tuple(config.verify.times),
        lams=tuple(config.verify.lams),
    )


def verify(suite: str, config_path: Optional[str] = None, seed: Optional[int] = None,
           reps: Optional[int] = None, workers: Optional[int] = None, out: Optional[str] = None,
           adversarial: bool = False) -> int:
    """
    Run a verification suite

    Args:
        suite: Suite name, or "all"
        config_path: Optional run configuration supplying the verify section
        adversarial: Swap in broken mechanisms; a correct harness then fails

    Returns:
        EXIT_OK when all reports pass, EXIT_TEST_FAILURE otherwise,
        EXIT_CONFIG_ERROR for an unknown suite or invalid configuration
    """
    if suite not in VERIFY_SUITES:
        message = f"unknown suite '{suite}'; choose from {', '.join(VERIFY_SUITES)}"
        log_config_error("verify", message)
        print_error(message)
        return EXIT_CONFIG_ERROR
    try:
        config = load_run_config(config_path) if config_path else RunConfig()
        config = apply_overrides(config, seed, reps, workers, out)
    except ConfigurationError as e:
        print_error(str(e))
        return EXIT_CONFIG_ERROR

    settings = settings_from(config, adversarial)
    out_dir = config.outputs.directory or os.path.join(OUTPUT_ROOT, f"verify-{suite}-seed{settings.seed}")
    print_header(f"verify: {suite}{' (adversarial)' if settings.adversarial else ''}")
    reports = run_suite(suite, settings)

    for report in reports:
        log_verify_result(suite, report.name, report.passed, report.statistic, report.threshold,
                          report.n_reps, report.seed)
        colour = Colors.GREEN if report.passed else Colors.RED
        mark = "✓" if report.passed else "✗"
        print(f"{colour}{mark} {report.name}: {report.statistic:.6g} "
              f"({report.comparison} {report.threshold:.6g}){Colors.RESET}")

    write_reports(os.path.join(out_dir, RUN_FILES["reports"]), reports)
    failed = [report.name for report in reports if not report.passed]
    write_summary(out_dir, {
        "command": "verify",
        "suite": suite,
        "seed": settings.seed,
        "reps": settings.reps,
        "adversarial": settings.adversarial,
        "n_reports": len(reports),
        "n_failed": len(failed),
        "failed": failed,
        "passed": not failed,
    })
    if failed:
        print_error(f"{len(failed)}/{len(reports)} checks failed", failed)
        return EXIT_TEST_FAILURE
    print_success(f"all {len(reports)} checks passed; reports in {out_dir}")
    return EXIT_OK
