import sys
import os
import math
from collections import Counter
import numpy as np
import pytest
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from config import SIGMA
from utils.core import ConstantField, TestFunction, TypePoint
from utils.engine import ReplicateSummary, run_replicates
from utils.mechanisms import ContinuousBirth, ContinuousBirthParams, InstantDeath, PureDeathParams
from utils.presets import preset_moran, preset_pure_death, preset_voter
from utils.classical_oracles import OracleMissingError
from utils.stats import (EmptySnapshotError, TestReport, allele_count, allele_frequency,
                         averaging_identity_check, corrected_sigma, drift_convergence, fitted_order,
                         heterozygosity_decay, lambda_convergence_study, level_map_convergence, mean_check,
                         pair_disagreement, projection_equivalence, restriction_check, total_count,
                         uniformity_from_summaries)

A, B = TypePoint((), 0), TypePoint((), 1)


def _summary(times, levels, projections=None):
    counts = [len(level) for level in levels]
    return ReplicateSummary(replicate=0, times=list(times), counts=counts,
                            allele_counts=[{0: c} for c in counts], levels=[np.asarray(l) for l in levels],
                            event_counts={}, event_digest="", projections=projections or [])


def test_report_comparisons():
    """Test the pass rule for z-type and p-value reports"""
    assert TestReport("z", 2.0, 3.0, 10, 0).passed
    assert not TestReport("z", 4.0, 3.0, 10, 0).passed
    p = TestReport("p", 0.2, 0.001, 10, 0, comparison="ge", p_value=0.2)
    assert p.passed
    assert p.row() == ["p", "0.2", "0.001", "ge", "0.2", 10, 0, "pass"]


def test_corrected_sigma_grows_with_tests():
    """Test the Bonferroni widening of the z threshold"""
    assert corrected_sigma(1) == SIGMA
    assert corrected_sigma(10) > SIGMA
    assert corrected_sigma(100) > corrected_sigma(10)


def test_projected_functionals():
    """Test counting functionals on a projected state"""
    state = Counter({A: 3, B: 2})
    assert total_count(state) == 5.0
    assert allele_count(1)(state) == 2.0
    assert allele_frequency(0)(state) == pytest.approx(0.6)
    assert allele_frequency(0)(Counter()) == 0.0
    assert pair_disagreement(state) == 6.0


def test_uniform_levels_pass_and_skewed_levels_fail():
    """Test the KS verdict on uniform and on half-range levels"""
    rng = np.random.default_rng(8)
    uniform = [_summary([1.0], [rng.uniform(0.0, 4.0, size=n)]) for n in rng.integers(5, 40, size=200)]
    skewed = [_summary([1.0], [rng.uniform(0.0, 2.0, size=n)]) for n in rng.integers(5, 40, size=200)]
    assert uniformity_from_summaries("u", uniform, [1.0], 4.0, 0).passed
    report = uniformity_from_summaries("s", skewed, [1.0], 4.0, 0)
    assert not report.passed
    assert report.details["tests"] > 1


def test_uniformity_needs_particles():
    """Test that an empty snapshot is reported"""
    with pytest.raises(EmptySnapshotError):
        uniformity_from_summaries("e", [_summary([1.0], [[]])], [1.0], 1.0, 0)


def test_projection_needs_oracle():
    """Test the missing-oracle error"""
    with pytest.raises(OracleMissingError):
        projection_equivalence(preset_pure_death(N0=5), None, {"n": total_count}, 2)


def test_heterozygosity_rate_fit():
    """Test the fitted decay rate of pairwise disagreement"""
    times = [0.0, math.log(2.0), 2.0 * math.log(2.0)]
    states = [Counter({A: 10, B: 10}), Counter({A: 5, B: 10}), Counter({A: 5, B: 5})]
    summary = _summary(times, [[0.1]] * 3, projections=states)
    report = heterozygosity_decay([summary], gamma=1.0)
    assert report.details["fitted_rate"] == pytest.approx(1.0)
    assert report.passed
    fixed = _summary(times, [[0.1]] * 3, projections=[Counter({A: 4})] * 3)
    with pytest.raises(ValueError):
        heterozygosity_decay([fixed], gamma=1.0)


def test_fitted_order():
    """Test the log-log slope of deviations"""
    assert fitted_order([10, 100, 1000], [1.0, 0.1, 0.01]) == pytest.approx(1.0)
    assert fitted_order([10, 100], [0.0, 0.0]) == math.inf


def test_drift_converges_at_rate_one():
    """Test the finite-lambda drift against -k u"""
    for k in (1, 2, 4):
        report = drift_convergence(k, 1.0, [10.0, 100.0, 1000.0])
        assert report.passed
        assert report.order == pytest.approx(1.0, abs=0.1)
        assert report.as_test().passed


def test_level_map_converges():
    """Test the discrete-birth level map against its limit"""
    report = level_map_convergence(2.0, 1.5, 1.0, 1.0, 1.0, [10.0, 100.0, 1000.0])
    assert report.passed
    assert report.details["limit"] == pytest.approx(1.5)
    with pytest.raises(ValueError):
        level_map_convergence(0.5, 1.5, 1.0, 1.0, 1.0, [10.0])


def test_mean_check():
    """Test the z-test of a sample mean"""
    samples = np.array([1.0, 2.0, 3.0, 4.0])
    assert mean_check("m", samples, 2.5, 4, 0).passed
    assert not mean_check("m", samples, 10.0, 4, 0).passed


@pytest.mark.parametrize("mechanism", [
    InstantDeath(PureDeathParams(ConstantField(1.0))),
    ContinuousBirth(ContinuousBirthParams(k=1, r=ConstantField(0.5))),
])
def test_averaging_identity(mechanism):
    """Test that uniform level draws average the generator to its projection"""
    g = TestFunction.single(ConstantField(0.5), 1.0)
    report = averaging_identity_check(mechanism, [A, B, A], g, 2.0, 4000, seed=1)
    assert abs(report.details["mc"] - report.details["projected"]) <= 5.0 * report.details["std_err"] + 1e-9


def test_lambda_independent_functional():
    """Test that pure-death counts do not depend on lambda under a shared seed"""
    def family(lam):
        return preset_pure_death(N0=30, lam=lam, t_end=0.5, record_events=False, record_lineage=False)
    reports = lambda_convergence_study(family, [1.0, 2.0, 4.0], {"count": lambda s: s.counts[-1]},
                                       n_reps=20, seed=3)
    assert len(reports) == 1
    assert reports[0].passed
    assert reports[0].order == math.inf


def test_moran_summaries_feed_projection_functionals():
    """Test that summaries carry projected states usable by the functionals"""
    summaries = run_replicates(preset_moran(N=6, gamma=1.0, t_end=0.2, seed=1), 2)
    assert all(total_count(s.projections[-1]) == 6.0 for s in summaries)


def test_restriction_check_moran():
    """Test that a conditionally Poisson Moran run restricts to the smaller cap bit for bit"""
    intensity = {A: 4.0, B: 4.0}
    report = restriction_check(
        lambda cap: preset_moran(intensity=intensity, lam=cap, t_end=0.5, snapshot_times=(0.25,),
                                 record_lineage=False),
        cap=6.0, small_cap=3.0, n_runs=3, seed=2)
    assert report.statistic == 0.0
    assert report.passed
    with pytest.raises(ValueError):
        restriction_check(lambda cap: preset_moran(intensity=intensity, lam=cap), cap=3.0, small_cap=3.0, n_runs=1)


def test_restriction_check_voter_needs_restricted_start():
    """Test the voter coupling with and without a shared initial configuration"""
    def spec_for(cap):
        return preset_voter(lattice_size=6, lam=cap, t_end=0.5, record_lineage=False)

    coupled = restriction_check(spec_for, cap=2.0, small_cap=1.0, n_runs=3, seed=4, restrict_initial=True)
    assert coupled.statistic == 0.0
    uncoupled = restriction_check(spec_for, cap=2.0, small_cap=1.0, n_runs=1, seed=4)
    assert uncoupled.statistic == 1.0
