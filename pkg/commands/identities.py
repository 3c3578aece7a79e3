"""
Identities Command

Monte-Carlo checks of the Poisson random measure identities (Laplace
functional, first and second moments, product and pairwise formulas) for
the configured measure specs.
"""
import csv
import logging
import os
from typing import List, Optional

from commands.console import Colors, print_error, print_header, print_success
from config import EXIT_OK, EXIT_TEST_FAILURE, OUTPUT_ROOT, RUN_FILES, SUITE_DEFAULT_REPS
from observability import log_export, log_verify_result
from utils.mechanisms import stream
from utils.poisson_oracle import IdentityReport, default_specs, run_identity_checks
from utils.suites import IDENTITY_STREAM_TAG

logger = logging.getLogger(__name__)

IDENTITY_HEADER = ["identity", "spec", "mc", "analytic", "std_err", "result"]


def identities(seed: int = 0, reps: Optional[int] = None, out: Optional[str] = None) -> int:
    """Run every identity on every default spec; EXIT_TEST_FAILURE if any misses by more than SIGMA std errs."""
    n_reps = reps or SUITE_DEFAULT_REPS["poisson-identities"]
    print_header(f"identities: {n_reps} replicates")
    rng = stream(seed, 0, IDENTITY_STREAM_TAG)
    reports: List[IdentityReport] = []
    for spec in default_specs():
        reports.extend(run_identity_checks(spec, n_reps, rng))

    for report in reports:
        log_verify_result("identities", f"{report.identity}/{report.spec}", report.passed,
                          abs(report.mc - report.analytic), report.std_err, n_reps, seed)
        colour = Colors.GREEN if report.passed else Colors.RED
        print(f"{colour}{'✓' if report.passed else '✗'} {report.identity}/{report.spec}: "
              f"mc={report.mc:.6g} analytic={report.analytic:.6g} se={report.std_err:.3g}{Colors.RESET}")

    out_dir = out or os.path.join(OUTPUT_ROOT, f"identities-seed{seed}")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, RUN_FILES["identities"])
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(IDENTITY_HEADER)
        for report in reports:
            writer.writerow(report.row())
    log_export("identities", path, len(reports))

    failed = [f"{report.identity}/{report.spec}" for report in reports if not report.passed]
    if failed:
        print_error(f"{len(failed)}/{len(reports)} identities failed", failed)
        return EXIT_TEST_FAILURE
    print_success(f"all {len(reports)} identities hold; table in {path}")
    return EXIT_OK
