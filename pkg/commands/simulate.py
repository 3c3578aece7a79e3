"""
Simulate Command

Runs the replicates of a configured model. Each replicate gets its own
directory with snapshots, event log and lineage log; the run directory holds
the manifest, the long-format counts and the summary.
"""
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional

from commands.console import print_error, print_header, print_success
from config import EXIT_CONFIG_ERROR, EXIT_OK, EXIT_PARTICLE_CAP, OUTPUT_ROOT, RUN_FILES, WORKERS
from observability import log_export
from utils.engine import ParticleCapExceeded, ReplicateSummary, Trajectory, run_replicates
from utils.io import count_rows, write_counts, write_events, write_lineage, write_snapshot
from utils.manifest import build_manifest, write_manifest, write_summary
from validation import ConfigurationError, apply_overrides, build_model_spec, load_run_config

logger = logging.getLogger(__name__)


def replicate_dir(run_dir: str, index: int) -> str:
    return os.path.join(run_dir, RUN_FILES["replicate_dir"].format(index=index))


def default_run_dir(name: str, spec_hash: str, seed: int) -> str:
    return os.path.join(OUTPUT_ROOT, f"{name}-{spec_hash[:10]}-seed{seed}")


@dataclass(frozen=True)
class ReplicateWriter:
    """Writes the files of one trajectory inside the worker that produced it."""
    run_dir: str
    snapshots: bool = True
    events: bool = True
    lineage: bool = True

    def __call__(self, trajectory: Trajectory) -> None:
        target = replicate_dir(self.run_dir, trajectory.replicate)
        os.makedirs(target, exist_ok=True)
        if self.snapshots:
            for index, (_, config) in enumerate(trajectory.snapshots):
                write_snapshot(os.path.join(target, RUN_FILES["snapshot"].format(index=index)), config)
        if self.events:
            write_events(os.path.join(target, RUN_FILES["events"]), trajectory.event_log)
        if self.lineage:
            write_lineage(os.path.join(target, RUN_FILES["lineage"]), trajectory.lineage_log)


def run_summary(spec_name: str, spec_hash: str, seed: int, t_end: float,
                summaries: List[ReplicateSummary]) -> Dict:
    """Machine-readable run summary; wall times stay in the logs so reruns match."""
    return {
        "command": "simulate",
        "spec_name": spec_name,
        "spec_hash": spec_hash,
        "seed": seed,
        "replicates": [
            {
                "replicate": summary.replicate,
                "coverage": [0.0, t_end],
                "snapshot_times": summary.times,
                "final_count": summary.counts[-1],
                "event_counts": summary.event_counts,
                "event_digest": summary.event_digest,
            }
            for summary in summaries
        ],
    }


def simulate(config_path: str, seed: Optional[int] = None, reps: Optional[int] = None,
             workers: Optional[int] = None, out: Optional[str] = None) -> int:
    """
    Run a configured simulation

    Returns:
        EXIT_OK, EXIT_CONFIG_ERROR for an invalid configuration (nothing is
        written), EXIT_PARTICLE_CAP when a replicate outgrows the cap
    """
    try:
        config = apply_overrides(load_run_config(config_path), seed, reps, workers, out)
        spec = build_model_spec(config, config_path)
    except ConfigurationError as e:
        print_error(str(e))
        return EXIT_CONFIG_ERROR

    replicates = config.engine.replicates
    manifest = build_manifest(spec.describe(), spec.seed, replicates,
                              extra={"command": "simulate", "config_path": os.path.abspath(config_path)})
    run_dir = config.outputs.directory or default_run_dir(spec.name, manifest["spec_hash"], spec.seed)
    n_workers = config.engine.workers or WORKERS
    writer = ReplicateWriter(run_dir, config.outputs.snapshots, config.outputs.events, config.outputs.lineage)

    print_header(f"simulate: {spec.name}")
    logger.info(f"Running {replicates} replicates of {spec.name} into {run_dir} (workers={n_workers})")
    write_manifest(run_dir, manifest)
    try:
        summaries = run_replicates(spec, replicates, workers=n_workers, on_trajectory=writer)
    except ParticleCapExceeded as e:
        print_error(str(e), {"cap": e.cap, "count": e.count, "time": e.time})
        return EXIT_PARTICLE_CAP

    if config.outputs.counts:
        rows = []
        for summary in summaries:
            rows.extend(count_rows(summary.replicate, summary.times, summary.counts, summary.allele_counts))
        write_counts(os.path.join(run_dir, RUN_FILES["counts"]), rows)
    path = write_summary(run_dir, run_summary(spec.name, manifest["spec_hash"], spec.seed, spec.t_end, summaries))
    log_export("summary", path, len(summaries))
    print_success(f"{replicates} replicates written to {run_dir}",
                  {"final_counts": [summary.counts[-1] for summary in summaries[:10]]})
    return EXIT_OK
