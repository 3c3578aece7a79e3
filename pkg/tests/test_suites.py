import sys
import os
import pytest
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from config import SUITE_DEFAULT_REPS
from utils.mechanisms import Thinning
from utils.mutants import LowestThinning, mutant_of
from utils.presets import preset_moran
from utils.stats import ks_uniform_levels
from utils.suites import (SuiteSettings, isolated_mechanisms, isolated_spec, kingman_reports,
                          poisson_identities_suite, run_suite, sample_lowest_trees, subsample_reports)


def test_settings_default_reps():
    """Test per-suite default replicate counts and the override"""
    assert SuiteSettings().reps_for("genealogy") == SUITE_DEFAULT_REPS["genealogy"]
    assert SuiteSettings(reps=7).reps_for("genealogy") == 7


def test_unknown_suite_is_rejected():
    """Test the suite name check"""
    with pytest.raises(ValueError):
        run_suite("nonsense", SuiteSettings(reps=1))


def test_every_isolated_mechanism_has_a_mutant():
    """Test that each mechanism family has a broken twin with its own label"""
    for name, factory in isolated_mechanisms().items():
        mechanism = factory()
        twin = mutant_of(mechanism)
        assert type(twin) is not type(mechanism)
        assert twin.label.startswith("mutant-")
    assert isinstance(mutant_of(isolated_mechanisms()["thinning"]()), LowestThinning)
    assert isinstance(isolated_mechanisms()["thinning"](), Thinning)


def test_isolated_mechanisms_keep_levels_uniform():
    """Test conditional uniformity for a correct mechanism on a small run"""
    spec = isolated_spec("pure-death", isolated_mechanisms()["pure-death"](), seed=2)
    assert ks_uniform_levels(spec, (0.5, 1.0), 100, seed=2).passed


def test_broken_thinning_is_detected():
    """Test that killing the lowest levels breaks uniformity"""
    spec = isolated_spec("thinning", mutant_of(isolated_mechanisms()["thinning"]()), seed=1)
    report = ks_uniform_levels(spec, (0.5, 1.0), 300, seed=1)
    assert not report.passed


def test_poisson_identities_suite_layout():
    """Test one report per identity and measure"""
    reports = poisson_identities_suite(SuiteSettings(reps=500, seed=4))
    assert len(reports) == 15
    assert reports[0].name.startswith("laplace:")
    assert all(report.n_reps == 500 for report in reports)


def test_subsample_and_recursion_consistency():
    """Test subtree restriction, the level recursion and lookdown direction on small runs"""
    reports = subsample_reports(runs=5, seed=3)
    assert [r.name for r in reports] == ["subsample-consistency", "index-recursion", "lookdown-direction"]
    assert all(r.passed for r in reports)


def test_kingman_reports_on_moran_trees():
    """Test that two-leaf Moran trees never multifurcate"""
    spec = preset_moran(N=10, gamma=1.0, t_end=3.0)
    trees = sample_lowest_trees(spec, 2, 20, seed=5)
    assert len(trees) == 20
    reports = kingman_reports(trees, 1.0, 0.5, 5)
    assert [r.name for r in reports] == ["kingman-rate", "kingman-multifurcations", "kingman-pair-times"]
    assert reports[1].passed
