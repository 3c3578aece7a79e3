"""
Structured logging and run metrics for the lookdown simulator
Provides JSON log entries, hash-chained audit trail and engine metrics
"""
import json
import logging
import os
import time
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Dict, List, Optional

from config import LOG_DIR, LOG_LEVEL
from utils.manifest import chain_entry


class EventType(Enum):
    RUN_START = "run_start"
    RUN_END = "run_end"
    SNAPSHOT = "snapshot"
    TIE_BREAK = "tie_break"
    PARTICLE_CAP = "particle_cap"
    CONFIG_ERROR = "config_error"
    VERIFY_RESULT = "verify_result"
    EXPORT = "export"
    PERFORMANCE_METRIC = "performance_metric"


@dataclass
class LogEntry:
    """Structured log entry for simulation runs"""
    timestamp: str
    level: str
    event_type: str
    component: str
    run_id: Optional[str]
    replicate: Optional[int]
    message: str
    data: Optional[Dict[str, Any]]
    error_details: Optional[Dict[str, Any]]
    performance_metrics: Optional[Dict[str, Any]]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class LookdownLogger:
    """Run-level logging system: console, JSON file trail and metrics"""

    def __init__(self, name: str = "lookdown", log_level: str = LOG_LEVEL,
                 log_dir: str = LOG_DIR):
        self.logger = logging.getLogger(name)
        self.logger.setLevel(getattr(logging, log_level.upper(), logging.INFO))
        self.log_dir = log_dir
        self._handlers_ready = False

        self.metrics = {
            'runs': 0,
            'events': {},
            'tie_breaks': 0,
            'particle_cap_aborts': 0,
            'config_errors': 0,
            'checks_passed': 0,
            'checks_failed': 0,
            'throughput': [],
        }

        self.audit_trail: List[LogEntry] = []
        self.max_audit_entries = 10000

        self.ledger_index = 0
        self.previous_hash = None
        self.start_time = time.time()

    def _setup_handlers(self):
        """Setup logging handlers on first use"""
        if self._handlers_ready:
            return
        self._handlers_ready = True
        if self.logger.handlers:
            return

        os.makedirs(self.log_dir, exist_ok=True)

        console_handler = logging.StreamHandler()
        console_handler.setLevel(logging.WARNING)

        run_handler = logging.FileHandler(os.path.join(self.log_dir, "run.log"))
        run_handler.setLevel(logging.INFO)

        error_handler = logging.FileHandler(os.path.join(self.log_dir, "errors.log"))
        error_handler.setLevel(logging.ERROR)

        detailed_formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )
        json_formatter = logging.Formatter('%(message)s')

        console_handler.setFormatter(detailed_formatter)
        run_handler.setFormatter(json_formatter)
        error_handler.setFormatter(detailed_formatter)

        self.logger.addHandler(console_handler)
        self.logger.addHandler(run_handler)
        self.logger.addHandler(error_handler)

    def _entry(self, level: str, event_type: EventType, component: str, message: str,
               run_id: Optional[str] = None, replicate: Optional[int] = None,
               data: Optional[Dict[str, Any]] = None,
               error_details: Optional[Dict[str, Any]] = None,
               performance_metrics: Optional[Dict[str, Any]] = None) -> LogEntry:
        return LogEntry(
            timestamp=datetime.now(timezone.utc).isoformat(),
            level=level,
            event_type=event_type.value,
            component=component,
            run_id=run_id,
            replicate=replicate,
            message=message,
            data=data,
            error_details=error_details,
            performance_metrics=performance_metrics,
        )

    def log_run_start(self, run_id: str, replicate: int, spec_name: str,
                      seed: int, n_particles: int):
        """Log the start of one trajectory"""
        entry = self._entry(
            "INFO", EventType.RUN_START, "engine",
            f"Run started: {spec_name} (seed={seed}, replicate={replicate})",
            run_id=run_id, replicate=replicate,
            data={"spec": spec_name, "seed": seed, "initial_particles": n_particles},
        )
        self._log_entry(entry)
        self.metrics['runs'] += 1

    def log_run_end(self, run_id: str, replicate: int, event_counts: Dict[str, int],
                    final_particles: int, wall_time: float):
        """Log the end of one trajectory with its event counts"""
        total = sum(event_counts.values())
        rate = total / wall_time if wall_time > 0 else float("inf")
        entry = self._entry(
            "INFO", EventType.RUN_END, "engine",
            f"Run finished: {total} events, {final_particles} particles",
            run_id=run_id, replicate=replicate,
            data={"event_counts": event_counts, "final_particles": final_particles},
            performance_metrics={"wall_time_s": wall_time, "events_per_s": rate},
        )
        self._log_entry(entry)
        for name, count in event_counts.items():
            self.metrics['events'][name] = self.metrics['events'].get(name, 0) + count
        self.metrics['throughput'].append(rate)
        if len(self.metrics['throughput']) > 1000:
            self.metrics['throughput'] = self.metrics['throughput'][-1000:]

    def log_snapshot(self, run_id: str, replicate: int, time_point: float,
                     n_particles: int):
        entry = self._entry(
            "DEBUG", EventType.SNAPSHOT, "engine",
            f"Snapshot at t={time_point!r}: {n_particles} particles",
            run_id=run_id, replicate=replicate,
            data={"time": time_point, "particles": n_particles},
        )
        self._log_entry(entry)

    def log_tie_break(self, mechanism: str, time_point: float, tied_ids: List[int],
                      chosen_id: int):
        """Log an argmin tie resolved by smallest particle id"""
        entry = self._entry(
            "WARNING", EventType.TIE_BREAK, "mechanisms",
            f"Tie in parent race resolved to particle {chosen_id}",
            data={"mechanism": mechanism, "time": time_point,
                  "tied_ids": tied_ids, "chosen_id": chosen_id},
        )
        self._log_entry(entry)
        self.metrics['tie_breaks'] += 1

    def log_particle_cap(self, run_id: Optional[str], replicate: Optional[int],
                         cap: int, count: int, time_point: float):
        """Log a population explosion abort"""
        entry = self._entry(
            "ERROR", EventType.PARTICLE_CAP, "engine",
            f"Particle cap exceeded: {count} > {cap} at t={time_point}",
            run_id=run_id, replicate=replicate,
            data={"cap": cap, "count": count, "time": time_point},
        )
        self._log_entry(entry)
        self.metrics['particle_cap_aborts'] += 1

    def log_config_error(self, source: str, error_message: str):
        """Log a rejected run configuration"""
        entry = self._entry(
            "WARNING", EventType.CONFIG_ERROR, "validation",
            f"Configuration rejected: {error_message}",
            data={"source": source},
            error_details={"message": error_message},
        )
        self._log_entry(entry)
        self.metrics['config_errors'] += 1

    def log_verify_result(self, suite: str, test_name: str, passed: bool,
                          statistic: float, threshold: float, n_reps: int, seed: int):
        """Log one verification report row"""
        entry = self._entry(
            "INFO" if passed else "ERROR", EventType.VERIFY_RESULT, "stats",
            f"{'PASS' if passed else 'FAIL'}: {suite}/{test_name}",
            data={"suite": suite, "test": test_name, "statistic": statistic,
                  "threshold": threshold, "n_reps": n_reps, "seed": seed},
        )
        self._log_entry(entry)
        if passed:
            self.metrics['checks_passed'] += 1
        else:
            self.metrics['checks_failed'] += 1

    def log_export(self, kind: str, path: str, rows: int):
        """Log a written artifact"""
        entry = self._entry(
            "INFO", EventType.EXPORT, "io",
            f"Exported {kind}: {path}",
            data={"kind": kind, "path": path, "rows": rows},
        )
        self._log_entry(entry)

    def log_performance(self, metric_name: str, value: float, unit: str = "events/s"):
        """Log performance metric"""
        entry = self._entry(
            "INFO", EventType.PERFORMANCE_METRIC, "performance",
            f"Performance metric: {metric_name} = {value} {unit}",
            performance_metrics={"metric_name": metric_name, "value": value, "unit": unit},
        )
        self._log_entry(entry)

    def _log_entry(self, entry: LogEntry):
        """Append to the trail, chain the hash and emit as JSON"""
        self._setup_handlers()
        self.audit_trail.append(entry)
        if len(self.audit_trail) > self.max_audit_entries:
            self.audit_trail = self.audit_trail[-self.max_audit_entries:]

        chained = chain_entry(entry.to_dict(), self.ledger_index, self.previous_hash)
        self.ledger_index += 1
        self.previous_hash = chained.get("_audit_hash")

        payload = json.dumps(chained, default=str)
        if entry.level == "ERROR":
            self.logger.error(payload)
        elif entry.level == "WARNING":
            self.logger.warning(payload)
        elif entry.level == "DEBUG":
            self.logger.debug(payload)
        else:
            self.logger.info(payload)

    def get_metrics(self) -> Dict[str, Any]:
        """Get current metrics"""
        throughput = self.metrics['throughput']
        return {
            **self.metrics,
            'mean_throughput': sum(throughput) / len(throughput) if throughput else 0.0,
            'total_audit_entries': len(self.audit_trail),
            'uptime_hours': (time.time() - self.start_time) / 3600,
        }

    def get_audit_trail(self, event_type: Optional[str] = None,
                        limit: int = 100) -> List[LogEntry]:
        """Get audit trail with optional filtering"""
        entries = self.audit_trail
        if event_type:
            entries = [entry for entry in entries if entry.event_type == event_type]
        return entries[-limit:]


# Global logger instance
lookdown_logger = LookdownLogger()


def log_run_start(*args, **kwargs):
    lookdown_logger.log_run_start(*args, **kwargs)


def log_run_end(*args, **kwargs):
    lookdown_logger.log_run_end(*args, **kwargs)


def log_snapshot(*args, **kwargs):
    lookdown_logger.log_snapshot(*args, **kwargs)


def log_tie_break(*args, **kwargs):
    lookdown_logger.log_tie_break(*args, **kwargs)


def log_particle_cap(*args, **kwargs):
    lookdown_logger.log_particle_cap(*args, **kwargs)


def log_config_error(*args, **kwargs):
    lookdown_logger.log_config_error(*args, **kwargs)


def log_verify_result(*args, **kwargs):
    lookdown_logger.log_verify_result(*args, **kwargs)


def log_export(*args, **kwargs):
    lookdown_logger.log_export(*args, **kwargs)


def log_performance(*args, **kwargs):
    lookdown_logger.log_performance(*args, **kwargs)
