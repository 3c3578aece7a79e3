"""
Lookdown Throughput Benchmark
Runs every preset at growing population sizes and reports events per second,
wall time per replicate and the particle counts reached.

    python tests/stress_test.py [--reps R] [--workers W] [--scale S]
"""

import argparse
import json
import logging
import os
import sys
import time
from datetime import datetime
from typing import Any, Dict, List

import numpy as np

sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from observability import log_performance, lookdown_logger
from utils.core import Domain
from utils.engine import ModelSpec, run_replicates
from utils.presets import (OffspringRule, SLFVAtom, SLFVEventLaw, preset_branching, preset_moran,
                           preset_pure_death, preset_slfv_first, preset_slfv_second, preset_voter)

# Configure logging
logging.basicConfig(level=logging.WARNING, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

# Configuration
DEFAULT_REPS = 4
SIZES = [100, 1_000, 10_000]


def benchmark_specs(size: int) -> Dict[str, ModelSpec]:
    """One spec per preset, sized so that `size` particles are alive at the start."""
    quiet = {"record_events": False, "record_lineage": False, "t_end": 1.0}
    domain = Domain(dim=1, side=1.0, n_alleles=2)
    law = SLFVEventLaw(atoms=(SLFVAtom(radius=0.05, weight=5.0),))
    return {
        "moran": preset_moran(N=size, gamma=1.0 / size, **quiet),
        "branching": preset_branching(N0=size, r=0.5, k=2, critical=True, lam=10.0, **quiet),
        "pure-death": preset_pure_death(N0=size, **quiet),
        "voter": preset_voter(lattice_size=size, **quiet),
        "slfv-first": preset_slfv_first(domain, law, u_max=float(size), **quiet),
        "slfv-second": preset_slfv_second(domain, SLFVEventLaw(law.atoms, OffspringRule.POISSON),
                                          lam=float(size), **quiet),
    }


class LookdownBenchmark:
    def __init__(self, reps: int, workers: int):
        self.reps = reps
        self.workers = workers
        self.results: Dict[str, Any] = {
            "start_time": datetime.now().isoformat(),
            "runs": [],
            "errors": [],
        }

    def run_one(self, name: str, size: int, spec: ModelSpec) -> Dict[str, Any]:
        """Replicates of one spec; events per second over the whole batch"""
        start = time.time()
        try:
            summaries = run_replicates(spec, self.reps, workers=self.workers)
        except Exception as e:
            logger.error(f"{name} at size {size} failed: {e}")
            self.results["errors"].append({"preset": name, "size": size, "error": str(e)})
            return {}
        elapsed = time.time() - start
        events = sum(sum(s.event_counts.values()) for s in summaries)
        result = {
            "preset": name,
            "size": size,
            "events": events,
            "elapsed": elapsed,
            "events_per_second": events / elapsed if elapsed > 0 else 0.0,
            "wall_time_per_replicate": float(np.mean([s.wall_time for s in summaries])),
            "final_count_mean": float(np.mean([s.counts[-1] for s in summaries])),
        }
        log_performance(f"{name}:{size}", result["events_per_second"])
        return result

    def run_benchmark(self, sizes: List[int]) -> Dict[str, Any]:
        for size in sizes:
            for name, spec in benchmark_specs(size).items():
                result = self.run_one(name, size, spec)
                if result:
                    self.results["runs"].append(result)
                    print(f"  {name:<12} N={size:<7} {result['events_per_second']:>12.0f} events/s "
                          f"({result['elapsed']:.2f}s)")
        self.results["end_time"] = datetime.now().isoformat()
        self.results["metrics"] = lookdown_logger.get_metrics()
        return self.results

    def generate_report(self) -> str:
        lines = ["", "=" * 60, "LOOKDOWN THROUGHPUT REPORT".center(60), "=" * 60]
        for result in self.results["runs"]:
            lines.append(f"{result['preset']:<12} N={result['size']:<7} "
                         f"{result['events_per_second']:>12.0f} events/s  "
                         f"final count {result['final_count_mean']:.1f}")
        if self.results["errors"]:
            lines.append("")
            lines.append(f"Errors: {len(self.results['errors'])}")
            for error in self.results["errors"]:
                lines.append(f"  {error['preset']} N={error['size']}: {error['error']}")
        lines.append("=" * 60)
        return "\n".join(lines)


def main():
    parser = argparse.ArgumentParser(description="Lookdown throughput benchmark")
    parser.add_argument("--reps", type=int, default=DEFAULT_REPS)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--scale", type=int, nargs="*", default=SIZES, help="Population sizes")
    parser.add_argument("--json", help="Write the raw results to this file")
    args = parser.parse_args()

    benchmark = LookdownBenchmark(args.reps, args.workers)
    print(f"Benchmarking presets at sizes {args.scale} ({args.reps} replicates each)")
    results = benchmark.run_benchmark(args.scale)
    print(benchmark.generate_report())
    if args.json:
        with open(args.json, "w", encoding="utf-8") as handle:
            json.dump(results, handle, indent=2)
    return 1 if results["errors"] else 0


if __name__ == "__main__":
    sys.exit(main())
