import sys
import os
import math
import pytest
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from utils.engine import run
from utils.genealogy import (IncompleteLineageError, LineageRecord, ancestor_index, ancestor_level,
                             coalescence_statistics, export_newick, extract_tree, parse_newick)
from utils.presets import preset_moran

# 0 is the root ancestor; 2 descends from 0 at t=1, 1 from 0 at t=2, 3 from 2 at t=3
LOG = [
    LineageRecord(1.0, 2, 0, 0.8, 0.1, "moran"),
    LineageRecord(2.0, 1, 0, 0.5, 0.1, "moran"),
    LineageRecord(3.0, 3, 2, 0.9, 0.8, "moran"),
]


def test_ancestor_walk():
    """Test the ancestor id at several look-back times"""
    assert ancestor_index(LOG, 3, 0.0, 4.0) == 0
    assert ancestor_index(LOG, 3, 2.5, 4.0) == 2
    assert ancestor_index(LOG, 1, 2.0, 4.0) == 1
    with pytest.raises(ValueError):
        ancestor_index(LOG, 3, 5.0, 4.0)


def test_ancestor_level_walk():
    """Test the level version of the ancestor walk"""
    assert ancestor_level(LOG, 0.9, 0.0, 4.0) == 0.1
    assert ancestor_level(LOG, 0.9, 1.5, 4.0) == 0.8


def test_extract_tree_topology_and_times():
    """Test merges, coalescence times and Newick output of a small log"""
    tree = extract_tree(LOG, [1, 2, 3], 4.0)
    assert len(tree.roots) == 1
    assert tree.merge_times() == [1.0, 3.0]
    assert tree.pairwise_times() == {(1, 2): 3.0, (1, 3): 3.0, (2, 3): 1.0}
    assert tree.clades() == {frozenset({"2", "3"}), frozenset({"1", "2", "3"})}
    assert export_newick(tree) == "(1:3.0,(2:1.0,3:1.0):2.0);"


def test_newick_parse_preserves_clades_and_times():
    """Test that parsed Newick keeps topology and pairwise times"""
    tree = extract_tree(LOG, [1, 2, 3], 4.0)
    parsed = parse_newick(export_newick(tree))
    assert parsed.clades() == tree.clades()
    assert parsed.pairwise_times() == pytest.approx(tree.pairwise_times())


def test_star_merge_is_one_node():
    """Test that merges at one event form a multifurcation"""
    log = [LineageRecord(1.0, 1, 0, 0.5, 0.1, "star"), LineageRecord(1.0, 2, 0, 0.7, 0.1, "star")]
    tree = extract_tree(log, [0, 1, 2], 2.0)
    assert tree.multifurcations() == 1
    assert export_newick(tree) == "(0:1.0,1:1.0,2:1.0);"


def test_forest_and_censoring():
    """Test unmerged lineages and right-censored statistics"""
    tree = extract_tree(LOG, [1, 5], 4.0)
    assert len(tree.roots) == 2
    assert len(export_newick(tree).splitlines()) == 2
    assert tree.coalescence_time(1, 5) == math.inf
    stats = coalescence_statistics([tree])
    assert stats["n_censored"] == 1
    assert stats["n_coalesced"] == 0
    assert math.isnan(stats["rate_mle"])


def test_single_leaf_tree():
    """Test a sample of one"""
    tree = extract_tree(LOG, [3], 4.0)
    assert export_newick(tree) == "3;"
    assert coalescence_statistics([tree])["n_pairs"] == 0


def test_coalescence_rate_estimate():
    """Test the censored exponential rate and its interval"""
    tree = extract_tree(LOG, [1, 2, 3], 4.0)
    stats = coalescence_statistics([tree])
    assert stats["n_coalesced"] == 3
    assert stats["mean_time"] == pytest.approx(7.0 / 3.0)
    assert stats["rate_mle"] == pytest.approx(3.0 / 7.0)
    low, high = stats["rate_ci"]
    assert low < stats["rate_mle"] < high


def test_immigrant_lineage_is_incomplete():
    """Test that a lineage starting inside the window is reported"""
    log = LOG[:2] + [LineageRecord(2.5, 4, None, 0.3, math.nan, "immigration")] + LOG[2:]
    with pytest.raises(IncompleteLineageError):
        extract_tree(log, [4], 4.0, r=0.0)
    assert extract_tree(log, [4], 4.0, r=3.0).leaves == [4]


def test_coverage_is_checked():
    """Test that requests outside the logged interval fail"""
    with pytest.raises(IncompleteLineageError):
        extract_tree(LOG, [1], 4.0, r=0.0, coverage=(1.0, 4.0))
    with pytest.raises(IncompleteLineageError):
        ancestor_index(LOG, 1, 0.0, 5.0, coverage=(0.0, 4.0))


def test_moran_genealogy_from_simulation():
    """Test that the lowest particle is the ancestor of every lineage in a long Moran run"""
    trajectory = run(preset_moran(N=8, gamma=2.0, t_end=20.0, snapshot_times=(0.0,), seed=6))
    start, final = trajectory.snapshots[0][1], trajectory.final
    lowest = start.lowest(1)[0]
    sample = final.lowest(4)
    tree = extract_tree(trajectory.lineage_log, sample, final.time, coverage=trajectory.coverage)
    assert len(tree.roots) == 1
    assert all(ancestor_index(trajectory.lineage_log, pid, 0.0, final.time) == lowest for pid in sample)
