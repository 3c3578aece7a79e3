import sys
import os
import json
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from observability import EventType, LookdownLogger
from utils.manifest import build_manifest, chain_entry, hash_entry, read_manifest, write_manifest
from utils.presets import preset_moran


def _logger(tmp_path, name):
    return LookdownLogger(name=f"lookdown-test-{name}", log_level="INFO", log_dir=str(tmp_path))


def test_metrics_accumulate(tmp_path):
    """Test run, tie-break, cap and verification counters"""
    log = _logger(tmp_path, "metrics")
    log.log_run_start("r1", 0, "moran", 7, 10)
    log.log_run_end("r1", 0, {"pairwise-replacement": 12, "thinning": 3}, 10, 0.5)
    log.log_run_end("r2", 1, {"pairwise-replacement": 8}, 10, 0.5)
    log.log_tie_break("discrete-birth", 0.25, [3, 4], 3)
    log.log_particle_cap("r3", 2, 100, 101, 0.9)
    log.log_verify_result("uniformity", "ks:pure-death", True, 0.4, 0.001, 100, 0)
    log.log_verify_result("uniformity", "power:pure-death", False, 0.2, 0.001, 100, 0)

    metrics = log.get_metrics()
    assert metrics['runs'] == 1
    assert metrics['events'] == {"pairwise-replacement": 20, "thinning": 3}
    assert metrics['tie_breaks'] == 1
    assert metrics['particle_cap_aborts'] == 1
    assert metrics['checks_passed'] == 1
    assert metrics['checks_failed'] == 1
    assert metrics['mean_throughput'] == (30.0 + 16.0) / 2
    assert metrics['total_audit_entries'] == 7


def test_audit_trail_filtering(tmp_path):
    """Test filtering the in-memory trail by event type"""
    log = _logger(tmp_path, "trail")
    log.log_export("snapshot", "runs/x/snapshot_0000.csv", 10)
    log.log_config_error("run.json", "run.json:3: unknown key")
    log.log_export("counts", "runs/x/counts.csv", 40)
    exports = log.get_audit_trail(EventType.EXPORT.value)
    assert [entry.data["kind"] for entry in exports] == ["snapshot", "counts"]
    assert len(log.get_audit_trail(limit=1)) == 1
    assert log.metrics['config_errors'] == 1


def test_run_log_is_hash_chained(tmp_path):
    """Test that each JSON line references the previous line's hash"""
    log = _logger(tmp_path, "chain")
    log.log_run_start("r1", 0, "moran", 7, 10)
    log.log_performance("events_per_s", 1234.5)
    log.log_export("counts", "runs/x/counts.csv", 4)

    with open(tmp_path / "run.log", "r", encoding="utf-8") as handle:
        lines = [json.loads(line) for line in handle if line.strip()]
    assert len(lines) == 3
    assert lines[0]["_block_ref"]["previous_hash"] is None
    for before, after in zip(lines, lines[1:]):
        assert after["_block_ref"]["previous_hash"] == before["_audit_hash"]
        assert after["_block_ref"]["index"] == before["_block_ref"]["index"] + 1


def test_snapshot_entries_are_debug(tmp_path):
    """Test that snapshot entries stay in the trail but not in run.log at INFO"""
    log = _logger(tmp_path, "snapshot")
    log.log_snapshot("r1", 0, 0.5, 10)
    assert log.get_audit_trail(EventType.SNAPSHOT.value)[0].data == {"time": 0.5, "particles": 10}
    with open(tmp_path / "run.log", "r", encoding="utf-8") as handle:
        assert handle.read() == ""


def test_hash_entry_ignores_key_order():
    """Test that hashing uses a canonical key order"""
    assert hash_entry({"a": 1, "b": [1, 2]}) == hash_entry({"b": [1, 2], "a": 1})
    assert hash_entry({"a": 1}) != hash_entry({"a": 2})
    chained = chain_entry({"a": 1}, 5, "abc")
    assert chained["_block_ref"] == {"index": 5, "previous_hash": "abc", "entry_hash": hash_entry({"a": 1})}


def test_manifest_round_trip(tmp_path):
    """Test that equal specs share a hash and the manifest reads back"""
    spec = preset_moran(N=10, gamma=1.0, t_end=1.0, seed=3)
    same = preset_moran(N=10, gamma=1.0, t_end=1.0, seed=3)
    other = preset_moran(N=12, gamma=1.0, t_end=1.0, seed=3)
    manifest = build_manifest(spec.describe(), seed=3, replicates=2, extra={"command": "simulate"})
    assert manifest["spec_hash"] == build_manifest(same.describe(), 3, 2)["spec_hash"]
    assert manifest["spec_hash"] != build_manifest(other.describe(), 3, 2)["spec_hash"]
    assert set(manifest["libraries"]) >= {"numpy", "scipy", "networkx", "pydantic"}

    write_manifest(str(tmp_path), manifest)
    loaded = read_manifest(str(tmp_path))
    assert loaded["spec_hash"] == manifest["spec_hash"]
    assert loaded["command"] == "simulate"
    assert "created_at" in loaded
