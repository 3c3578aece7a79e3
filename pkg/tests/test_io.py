import sys
import os
import math
import numpy as np
import pytest
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from utils.core import Configuration
from utils.engine import run
from utils.genealogy import LineageRecord
from utils.io import (count_rows, read_counts, read_events, read_lineage, read_snapshot, write_counts,
                      write_events, write_lineage, write_snapshot)
from utils.presets import preset_moran


def test_snapshot_reads_back_bit_identical(tmp_path):
    """Test that a spatial snapshot survives the file format exactly"""
    config = Configuration.from_arrays(
        3.0, np.array([[0.1], [1.0 / 3.0], [0.7]]), [0, 1, 1], [math.pi / 2, 0.25, 2.999999999],
        birth_times=[0.0, 0.5, 1.0 / 7.0], time=1.25)
    config.remove_ids([1])
    path = str(tmp_path / "snap" / "snapshot_0000.csv")
    assert write_snapshot(path, config) == 2
    back = read_snapshot(path)
    assert back == config
    assert back.next_id == config.next_id
    assert back.time == 1.25


def test_empty_snapshot(tmp_path):
    """Test an empty configuration keeps its metadata"""
    config = Configuration(2.0, dim=1, time=0.5)
    config.next_id = 7
    path = str(tmp_path / "empty.csv")
    write_snapshot(path, config)
    back = read_snapshot(path)
    assert len(back) == 0
    assert back.next_id == 7
    assert back.lam == 2.0


def test_snapshot_needs_metadata(tmp_path):
    """Test that a headerless file is refused"""
    path = tmp_path / "bad.csv"
    path.write_text("id,level,allele,birth_time\n")
    with pytest.raises(ValueError):
        read_snapshot(str(path))


def test_logs_from_a_run(tmp_path):
    """Test the event and lineage logs of a Moran run"""
    trajectory = run(preset_moran(N=8, gamma=2.0, t_end=0.5, seed=1))
    events_path = str(tmp_path / "events.csv")
    lineage_path = str(tmp_path / "lineage.csv")
    assert write_events(events_path, trajectory.event_log) == len(trajectory.event_log)
    write_lineage(lineage_path, trajectory.lineage_log)
    assert read_events(events_path) == list(trajectory.event_log)
    assert read_lineage(lineage_path) == list(trajectory.lineage_log)


def test_immigrant_lineage_has_no_parent(tmp_path):
    """Test the empty parent field of a parentless record"""
    path = str(tmp_path / "lineage.csv")
    write_lineage(path, [LineageRecord(0.5, 4, None, 0.3, math.nan, "immigration")])
    record = read_lineage(path)[0]
    assert record.parent_id is None
    assert math.isnan(record.parent_level)


def test_long_format_counts(tmp_path):
    """Test totals and per-allele rows of the count table"""
    rows = count_rows(2, [0.0, 1.0], [5, 3], [{1: 2, 0: 3}, {0: 3}])
    assert [(r["allele"], r["count"]) for r in rows] == [(-1, 5), (0, 3), (1, 2), (-1, 3), (0, 3)]
    path = str(tmp_path / "counts.csv")
    assert write_counts(path, rows) == 5
    back = read_counts(path)
    assert back[0] == {"replicate": 2, "time": 0.0, "allele": -1, "count": 5}
    assert back[-1]["time"] == 1.0
