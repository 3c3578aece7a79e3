import sys
import os
import math
import dataclasses
import numpy as np
import pytest
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from utils.core import AlleleField, ConstantField, Configuration, TypePoint
from utils.engine import (EXIT_LABEL, InitialState, MissingStateError, ModelSpec, ParticleCapExceeded, evolve,
                          resume, run, run_replicates, summarize)
from utils.mechanisms import (FiniteTypeLaw, Immigration, ImmigrationSource, InstantDeath, PureDeath,
                              PureDeathParams, Replacement, ReplacementEvent, ReplacementVariant)
from utils.presets import preset_branching, preset_moran, preset_pure_death


def _death_spec(**overrides):
    config = Configuration.from_arrays(1.0, np.empty((2, 0)), [0, 0], [0.1, 0.5])
    values = dict(initial=InitialState.explicit(config), lam=1.0,
                  mechanisms=[PureDeath(PureDeathParams(ConstantField(1.0)))], t_end=1.0)
    values.update(overrides)
    return ModelSpec(**values)


def test_pure_death_trajectory_is_deterministic():
    """Test level growth and the exit event of a pure-death run"""
    trajectory = run(_death_spec())
    final = trajectory.final
    assert final.ids.tolist() == [0]
    assert final.levels[0] == pytest.approx(0.1 * math.e)
    assert trajectory.event_counts == {EXIT_LABEL: 1}
    exit_event = trajectory.event_log[0]
    assert exit_event.affected_ids == (1,)
    assert exit_event.time == pytest.approx(math.log(2.0))


def test_snapshot_schedule_ends_at_t_end():
    """Test that t_end is always the last snapshot"""
    spec = _death_spec(snapshot_times=(0.5, 0.0))
    assert spec.snapshot_times == (0.0, 0.5, 1.0)
    trajectory = run(spec)
    assert [t for t, _ in trajectory.snapshots] == [0.0, 0.5, 1.0]
    assert len(trajectory.snapshots[0][1]) == 2


def test_model_spec_validation():
    """Test rejection of invalid lambdas, seeds and snapshot times"""
    with pytest.raises(ValueError):
        _death_spec(lam=math.inf)
    with pytest.raises(ValueError):
        _death_spec(snapshot_times=(2.0,))
    with pytest.raises(ValueError):
        _death_spec(seed=-1)
    with pytest.raises(ValueError):
        run(_death_spec(lam=2.0))


def test_duplicate_labels_are_made_unique():
    """Test relabelling of repeated mechanisms"""
    spec = _death_spec(mechanisms=[InstantDeath(PureDeathParams(ConstantField(1.0))),
                                   InstantDeath(PureDeathParams(ConstantField(1.0)))])
    assert [m.label for m in spec.mechanisms] == ["instant-death", "instant-death-2"]


def test_same_seed_same_trajectory():
    """Test bit-identical reruns and divergence across seeds"""
    spec = preset_moran(N=20, gamma=1.0, t_end=2.0, seed=5)
    first, second = run(spec), run(spec)
    assert first.final == second.final
    assert summarize(first).event_digest == summarize(second).event_digest
    other = run(dataclasses.replace(spec, seed=6))
    assert summarize(other).event_digest != summarize(first).event_digest


def test_moran_keeps_levels_and_count():
    """Test that pairwise replacement never moves levels nor changes the count"""
    trajectory = run(preset_moran(N=30, gamma=2.0, t_end=1.0, snapshot_times=(0.0,), seed=1))
    start, end = trajectory.snapshots[0][1], trajectory.final
    assert len(end) == 30
    assert np.array_equal(start.levels, end.levels)
    assert np.array_equal(start.ids, end.ids)
    lowest = start.lowest(1)[0]
    assert end.alleles[end.row_of(lowest)] == start.alleles[start.row_of(lowest)]


def test_replicates_do_not_depend_on_workers():
    """Test that worker count leaves every replicate unchanged"""
    spec = preset_moran(N=10, gamma=1.0, t_end=0.5, seed=3)
    serial = run_replicates(spec, 3, workers=1)
    parallel = run_replicates(spec, 3, workers=2)
    assert [s.replicate for s in parallel] == [0, 1, 2]
    assert [s.event_digest for s in serial] == [s.event_digest for s in parallel]
    assert [s.counts for s in serial] == [s.counts for s in parallel]


def test_master_seed_override():
    """Test that the master seed replaces the ModelSpec seed"""
    spec = preset_pure_death(N0=50, t_end=0.3, seed=0)
    a = run_replicates(spec, 2, master_seed=9)
    b = run_replicates(dataclasses.replace(spec, seed=9), 2)
    assert [s.event_digest for s in a] == [s.event_digest for s in b]
    with pytest.raises(ValueError):
        run_replicates(spec, 0)


def test_particle_cap_aborts():
    """Test the hard cap on the population"""
    source = ImmigrationSource(200.0, FiniteTypeLaw((TypePoint(),), (1.0,)))
    spec = _death_spec(mechanisms=[Immigration([source])], particle_cap=5)
    with pytest.raises(ParticleCapExceeded) as caught:
        run(spec)
    assert caught.value.cap == 5
    assert caught.value.count == 6


def test_resume_matches_longer_run():
    """Test that resuming equals running to the later time at once"""
    spec = preset_branching(N0=20, r=0.5, k=2, critical=True, lam=5.0, t_end=0.5, seed=4)
    resumed = resume(run(spec), 0.5)
    direct = run(dataclasses.replace(spec, t_end=1.0, snapshot_times=(0.5,)))
    assert resumed.spec.t_end == 1.0
    assert resumed.final == direct.final
    assert [t for t, _ in resumed.snapshots] == [0.5, 1.0]


def test_resume_needs_state():
    """Test resume errors"""
    trajectory = run(_death_spec())
    with pytest.raises(ValueError):
        resume(trajectory, -1.0)
    trajectory.state = None
    with pytest.raises(MissingStateError):
        resume(trajectory, 1.0)


def test_evolve_without_mechanisms_only_moves_time():
    """Test evolve on an inert configuration"""
    config = Configuration.from_arrays(2.0, np.empty((2, 0)), [0, 1], [0.5, 1.5])
    after = evolve(config, [], 1.5)
    assert after.time == 1.5
    assert np.array_equal(after.levels, config.levels)
    assert config.time == 0.0


def test_summary_frequencies():
    """Test per-snapshot allele frequencies"""
    summary = summarize(run(preset_moran(N=10, gamma=0.0, t_end=0.1, seed=2)))
    assert summary.counts == [10]
    assert summary.frequency(0) == pytest.approx(0.5)
    assert summary.frequency(1) == pytest.approx(0.5)


def _death_and_replacement_spec(k):
    config = Configuration.from_arrays(1.0, np.empty((5, 0)), [1, 0, 0, 0, 0], [0.01, 0.3, 0.5, 0.7, 0.9])
    mechanisms = [PureDeath(PureDeathParams(AlleleField((0.0, 5.0)))),
                  Replacement([ReplacementEvent(ReplacementVariant.FIXED_K, rate=3.0, k=k)])]
    return ModelSpec(initial=InitialState.explicit(config), lam=1.0, mechanisms=mechanisms, t_end=3.0, seed=1)


def test_type_changes_reschedule_exits():
    """Test that particles switched to a dying type still reach lambda and exit"""
    trajectory = run(_death_and_replacement_spec(2))
    ceiling = np.nextafter(1.0, 0.0)
    for _, snapshot in trajectory.snapshots:
        assert np.all(snapshot.levels[snapshot.alleles == 1] < ceiling)
    assert trajectory.event_counts[EXIT_LABEL] >= 1


def test_fixed_k_replacement_pauses_below_k():
    """Test that a k-subset event stops firing once fewer than k particles remain"""
    trajectory = run(_death_and_replacement_spec(5))
    assert len(trajectory.final) < 5
    assert trajectory.event_counts[EXIT_LABEL] >= 1
    small = Configuration.from_arrays(1.0, np.empty((2, 0)), [0, 1], [0.2, 0.4])
    replacement = Replacement([ReplacementEvent(ReplacementVariant.FIXED_K, rate=3.0, k=5)])
    assert replacement.rate(small) == 0.0
