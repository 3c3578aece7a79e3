"""
Simulation Engine

Event-driven superposition of mechanisms. Between events the combined level
drift and any type motion are advanced in closed form (or numerically for
composite drifts); exits of levels through lambda are scheduled exactly on a
lazy heap and win ties against mechanism events.
"""
import copy
import dataclasses
import hashlib
import heapq
import logging
import math
import time
import uuid
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import PARTICLE_CAP
from observability import log_particle_cap, log_run_end, log_run_start, log_snapshot
from utils.core import (Configuration, Domain, Intensity, LookdownError, TypePoint, project,
                        sample_conditionally_poisson, sample_uniform_levels)
from utils.genealogy import LineageRecord
from utils.mechanisms import (INITIAL_STREAM_TAG, EventRecord, EventSink, Mechanism, MechanismStreams,
                              PairwiseReplacement, combine_drifts, stream)

logger = logging.getLogger(__name__)

EXIT_LABEL = "exit"


class ParticleCapExceeded(LookdownError):
    """Raised when the population outgrows the configured hard cap."""

    def __init__(self, cap: int, count: int, time_point: float):
        super().__init__(f"particle cap {cap} exceeded: {count} particles at t={time_point}")
        self.cap = cap
        self.count = count
        self.time = time_point

    def __reduce__(self):
        return type(self), (self.cap, self.count, self.time)


class MissingStateError(LookdownError):
    """Raised when a trajectory cannot be resumed."""


class InitialKind(str, Enum):
    UNIFORM_LEVELS = "uniform-levels"
    CONDITIONALLY_POISSON = "conditionally-poisson"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class InitialState:
    """How the time-zero configuration is drawn."""
    kind: InitialKind
    types: Tuple[TypePoint, ...] = ()
    intensity: Optional[Intensity] = None
    config: Optional[Configuration] = None

    @classmethod
    def uniform_levels(cls, types: Sequence[TypePoint]) -> "InitialState":
        return cls(InitialKind.UNIFORM_LEVELS, types=tuple(types))

    @classmethod
    def conditionally_poisson(cls, intensity: Intensity) -> "InitialState":
        return cls(InitialKind.CONDITIONALLY_POISSON, intensity=intensity)

    @classmethod
    def explicit(cls, config: Configuration) -> "InitialState":
        return cls(InitialKind.EXPLICIT, config=config)

    def build(self, lam: float, rng: np.random.Generator) -> Configuration:
        if self.kind == InitialKind.UNIFORM_LEVELS:
            return sample_uniform_levels(self.types, lam, rng)
        if self.kind == InitialKind.CONDITIONALLY_POISSON:
            return sample_conditionally_poisson(self.intensity, lam, rng)
        if self.config.lam != lam:
            raise ValueError(f"explicit configuration has lambda {self.config.lam}, spec has {lam}")
        return self.config.copy()

    def describe(self) -> Dict:
        if self.kind == InitialKind.UNIFORM_LEVELS:
            counts = Counter(self.types)
            return {"kind": self.kind.value,
                    "types": sorted([[list(x.location), x.allele, n] for x, n in counts.items()])}
        if self.kind == InitialKind.CONDITIONALLY_POISSON:
            return {"kind": self.kind.value, "intensity": repr(self.intensity)}
        return {"kind": self.kind.value, "particles": len(self.config),
                "levels": [repr(float(u)) for u in self.config.levels]}


@dataclass
class ModelSpec:
    """
    A complete model: initial law, lambda (the truncation level u_max for
    lambda = infinity models with fixed levels), the mechanism list and the
    observation schedule. t_end is always the last snapshot time.
    """
    initial: InitialState
    lam: float
    mechanisms: List[Mechanism]
    t_end: float
    snapshot_times: Tuple[float, ...] = ()
    seed: int = 0
    domain: Domain = field(default_factory=Domain)
    particle_cap: int = PARTICLE_CAP
    record_events: bool = True
    record_lineage: bool = True
    name: str = "custom"
    params: Dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be positive and finite, got {self.lam}")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        times = sorted(set(float(t) for t in self.snapshot_times))
        if any(t < 0 or t > self.t_end for t in times):
            raise ValueError(f"snapshot times must lie in [0, {self.t_end}]")
        if not times or times[-1] != self.t_end:
            times.append(float(self.t_end))
        self.snapshot_times = tuple(times)
        seen = Counter()
        for mechanism in self.mechanisms:
            seen[mechanism.label] += 1
            if seen[mechanism.label] > 1:
                mechanism.label = f"{mechanism.label}-{seen[mechanism.label]}"

    def describe(self) -> Dict:
        """Canonical description hashed into the run manifest."""
        return {
            "name": self.name,
            "params": {key: repr(value) for key, value in sorted(self.params.items())},
            "lambda": repr(self.lam),
            "initial": self.initial.describe(),
            "mechanisms": [mechanism.describe() for mechanism in self.mechanisms],
            "t_end": repr(self.t_end),
            "snapshot_times": [repr(t) for t in self.snapshot_times],
            "domain": dataclasses.asdict(self.domain),
            "particle_cap": self.particle_cap,
        }

    def initial_configuration(self, replicate: int = 0) -> Configuration:
        """The time-zero configuration every run of this replicate starts from."""
        return self.initial.build(self.lam, stream(self.seed, replicate, INITIAL_STREAM_TAG))


@dataclass
class Trajectory:
    spec: ModelSpec
    replicate: int
    snapshots: List[Tuple[float, Configuration]]
    event_log: List[EventRecord]
    lineage_log: List[LineageRecord]
    event_counts: Dict[str, int]
    state: Optional["Simulation"] = None
    wall_time: float = 0.0
    start_time: float = 0.0

    @property
    def final(self) -> Configuration:
        return self.snapshots[-1][1]

    @property
    def coverage(self) -> Tuple[float, float]:
        """Time interval covered by the lineage log."""
        return self.start_time, self.snapshots[-1][0]


class Simulation:
    """Mutable state of one trajectory; advance_to is the event loop."""

    def __init__(self, spec: ModelSpec, replicate: int = 0):
        self.spec = spec
        self.replicate = int(replicate)
        self.config = spec.initial_configuration(replicate)
        self.now = self.config.time
        self.start = self.now
        self.mechanisms: List[Mechanism] = copy.deepcopy(spec.mechanisms)
        static = all(m.preserves_levels for m in self.mechanisms)
        for idx, mechanism in enumerate(self.mechanisms):
            mechanism.bind(self.config, MechanismStreams(spec.seed, replicate, idx), static_levels=static)
        self.movers = [m for m in self.mechanisms if m.moves_types]
        self.drift = combine_drifts([m.drift() for m in self.mechanisms])
        self.sink = EventSink(spec.record_events, spec.record_lineage)
        self._exits: List[Tuple[float, int]] = []
        self._rebuild_exits()
        event_sources = [m for m in self.mechanisms if not m.moves_types]
        self._batch = (len(event_sources) == 1 and not self.movers and self.drift is None
                       and isinstance(event_sources[0], PairwiseReplacement) and event_sources[0].static)
        self._check_cap()

    # -- exits ----------------------------------------------------------------

    def _rebuild_exits(self) -> None:
        self._exits = []
        if self.drift is None or len(self.config) == 0:
            return
        self._push_exits(np.arange(len(self.config)))
        heapq.heapify(self._exits)

    def _push_exits(self, rows: np.ndarray) -> None:
        config = self.config
        taus = self.drift.exit_times(config.locations[rows], config.alleles[rows],
                                     config.levels[rows], config.lam)
        for pid, tau in zip(config.ids[rows].tolist(), taus.tolist()):
            if math.isfinite(tau):
                heapq.heappush(self._exits, (self.now + tau, pid))

    def _next_exit(self) -> float:
        while self._exits and not self.config.has_id(self._exits[0][1]):
            heapq.heappop(self._exits)
        return self._exits[0][0] if self._exits else math.inf

    def _process_exits(self, t: float) -> None:
        leaving = []
        while self._exits and self._exits[0][0] <= t:
            _, pid = heapq.heappop(self._exits)
            if self.config.has_id(pid):
                leaving.append(pid)
        if leaving:
            self.config.remove_ids(sorted(leaving))
            self.sink.event(t, EXIT_LABEL, sorted(leaving))

    # -- flows ----------------------------------------------------------------

    def _flow(self, dt: float) -> None:
        if dt <= 0 or len(self.config) == 0:
            return
        config = self.config
        if self.drift is not None:
            flowed = self.drift.flow(config.locations, config.alleles, config.levels, config.lam, dt)
            config.levels[:] = np.clip(flowed, 0.0, np.nextafter(config.lam, 0.0))
            config.mark_levels_changed()
        for mover in self.movers:
            mover.advance(config, dt)

    def _check_cap(self) -> None:
        count = len(self.config)
        if count > self.spec.particle_cap:
            log_particle_cap(None, self.replicate, self.spec.particle_cap, count, self.now)
            raise ParticleCapExceeded(self.spec.particle_cap, count, self.now)

    # -- loop -----------------------------------------------------------------

    def _next_event(self) -> Tuple[float, Optional[Mechanism]]:
        best, chosen = math.inf, None
        for mechanism in self.mechanisms:
            t = mechanism.next_time(self.config, self.now)
            if t < best:
                best, chosen = t, mechanism
        return best, chosen

    def advance_to(self, target: float) -> None:
        if target < self.now:
            raise ValueError(f"cannot advance backwards from {self.now} to {target}")
        if self._batch:
            self.mechanisms[0].run_until(self.config, target, self.sink)
            self.now = target
            self.config.time = target
            return
        config = self.config
        while True:
            t_event, mechanism = self._next_event()
            t_exit = self._next_exit()
            t_next = min(t_event, t_exit)
            if t_next > target:
                self._flow(target - self.now)
                self.now = target
                break
            self._flow(t_next - self.now)
            self.now = t_next
            config.time = t_next
            if t_exit <= t_event:
                self._process_exits(t_next)
            else:
                before_next_id = config.next_id
                before_types = config.type_version
                mechanism.fire(config, t_next, self.sink)
                if self.drift is not None:
                    # exit times depend on type
                    if mechanism.jumps_levels or config.type_version != before_types:
                        self._rebuild_exits()
                    elif config.next_id > before_next_id:
                        added = config.next_id - before_next_id
                        self._push_exits(np.arange(len(config) - added, len(config)))
                self._check_cap()
            if self.movers and self.drift is not None:
                self._rebuild_exits()
        config.time = self.now


def run(spec: ModelSpec, replicate: int = 0, run_id: Optional[str] = None) -> Trajectory:
    """Simulate one replicate of `spec` and record its snapshots and logs."""
    run_id = run_id or uuid.uuid4().hex[:12]
    started = time.perf_counter()
    simulation = Simulation(spec, replicate)
    log_run_start(run_id, replicate, spec.name, spec.seed, len(simulation.config))
    snapshots: List[Tuple[float, Configuration]] = []
    for t in spec.snapshot_times:
        simulation.advance_to(t)
        snapshots.append((t, simulation.config.copy()))
        log_snapshot(run_id, replicate, t, len(simulation.config))
    wall = time.perf_counter() - started
    log_run_end(run_id, replicate, dict(simulation.sink.counts), len(simulation.config), wall)
    return Trajectory(
        spec=spec,
        replicate=replicate,
        snapshots=snapshots,
        event_log=list(simulation.sink.events),
        lineage_log=list(simulation.sink.lineage),
        event_counts=dict(simulation.sink.counts),
        state=simulation,
        wall_time=wall,
        start_time=simulation.start,
    )


def resume(trajectory: Trajectory, additional_time: float,
           snapshot_times: Optional[Sequence[float]] = None) -> Trajectory:
    """
    Continue a trajectory by `additional_time`; snapshot_times are absolute
    and default to the new end time alone.
    """
    if trajectory.state is None:
        raise MissingStateError("trajectory was produced without retained engine state")
    if additional_time < 0:
        raise ValueError("additional_time must be nonnegative")
    simulation = copy.deepcopy(trajectory.state)
    end = trajectory.spec.t_end + additional_time
    times = sorted(set(float(t) for t in (snapshot_times or ())) | {end})
    if any(t <= trajectory.spec.t_end and additional_time > 0 or t > end for t in times):
        raise ValueError("resume snapshot times must lie in (t_end, t_end + additional_time]")
    snapshots = list(trajectory.snapshots)
    if additional_time > 0:
        for t in times:
            simulation.advance_to(t)
            snapshots.append((t, simulation.config.copy()))
    spec = dataclasses.replace(trajectory.spec, t_end=end,
                               snapshot_times=tuple(t for t, _ in snapshots))
    simulation.spec = spec
    return Trajectory(
        spec=spec,
        replicate=trajectory.replicate,
        snapshots=snapshots,
        event_log=list(simulation.sink.events),
        lineage_log=list(simulation.sink.lineage),
        event_counts=dict(simulation.sink.counts),
        state=simulation,
        wall_time=trajectory.wall_time,
        start_time=trajectory.start_time,
    )


def evolve(config: Configuration, mechanisms: Sequence[Mechanism], duration: float,
           seed: int = 0, replicate: int = 0, particle_cap: int = PARTICLE_CAP) -> Configuration:
    """Advance `config` under `mechanisms` for `duration` without recording anything."""
    spec = ModelSpec(
        initial=InitialState.explicit(config),
        lam=config.lam,
        mechanisms=list(mechanisms),
        t_end=config.time + duration,
        snapshot_times=(),
        seed=seed,
        particle_cap=particle_cap,
        record_events=False,
        record_lineage=False,
    )
    simulation = Simulation(spec, replicate)
    simulation.advance_to(config.time + duration)
    return simulation.config


# ---------------------------------------------------------------------------
# Replicates
# ---------------------------------------------------------------------------

@dataclass
class ReplicateSummary:
    """Per-replicate observables kept after the trajectory is discarded."""
    replicate: int
    times: List[float]
    counts: List[int]
    allele_counts: List[Dict[int, int]]
    levels: List[np.ndarray]
    event_counts: Dict[str, int]
    event_digest: str
    wall_time: float = 0.0
    projections: List[Counter] = field(default_factory=list)

    def frequency(self, allele: int, index: int = -1) -> float:
        count = self.counts[index]
        return self.allele_counts[index].get(allele, 0) / count if count else math.nan


def event_digest(events: Sequence[EventRecord]) -> str:
    digest = hashlib.sha256()
    for record in events:
        digest.update(f"{record.time!r}|{record.mechanism}|{record.event_id}|{record.affected_ids}\n"
                      .encode("utf-8"))
    return digest.hexdigest()


def summarize(trajectory: Trajectory) -> ReplicateSummary:
    return ReplicateSummary(
        replicate=trajectory.replicate,
        times=[t for t, _ in trajectory.snapshots],
        counts=[len(config) for _, config in trajectory.snapshots],
        allele_counts=[dict(Counter(config.alleles.tolist())) for _, config in trajectory.snapshots],
        levels=[config.levels.copy() for _, config in trajectory.snapshots],
        event_counts=dict(trajectory.event_counts),
        event_digest=event_digest(trajectory.event_log),
        wall_time=trajectory.wall_time,
        projections=[project(config) for _, config in trajectory.snapshots],
    )


def _replicate_job(args) -> ReplicateSummary:
    spec, replicate, on_trajectory = args
    trajectory = run(spec, replicate)
    if on_trajectory is not None:
        on_trajectory(trajectory)
    return summarize(trajectory)


def run_replicates(spec: ModelSpec, n: int, master_seed: Optional[int] = None, workers: int = 1,
                   on_trajectory: Optional[Callable[[Trajectory], None]] = None,
                   start: int = 0) -> List[ReplicateSummary]:
    """
    Run replicates start..start+n-1. Each replicate derives its streams from
    (seed, replicate index), so results do not depend on `workers`.
    on_trajectory (picklable) sees each full trajectory inside its worker.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if master_seed is not None:
        spec = dataclasses.replace(spec, seed=int(master_seed))
    jobs = [(spec, start + i, on_trajectory) for i in range(n)]
    if workers <= 1 or n == 1:
        results = [_replicate_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate_job, jobs))
    results.sort(key=lambda summary: summary.replicate)
    logger.info(f"{spec.name}: {n} replicates finished (seed={spec.seed}, workers={workers})")
    return results
