import sys
import os
import json
import pytest
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from config import EXIT_CONFIG_ERROR, EXIT_OK, EXIT_PARTICLE_CAP, EXIT_TEST_FAILURE, RUN_FILES
from main import main

MORAN = {
    "model": {"preset": "moran", "params": {"N": 10, "gamma": 1.0}},
    "engine": {"t_end": 0.5, "snapshots": [0.25], "seed": 11, "replicates": 2, "workers": 1},
}


def _write(path, data):
    path.write_text(json.dumps(data, indent=2))
    return str(path)


def _simulate(tmp_path, name="run", data=None):
    config = _write(tmp_path / f"{name}.json", data or MORAN)
    out = str(tmp_path / name)
    return main(["simulate", "--config", config, "--out", out, "--workers", "1"]), out


def test_simulate_writes_run_directory(tmp_path):
    """Test the files of a simulate run"""
    code, out = _simulate(tmp_path)
    assert code == EXIT_OK
    for name in ("manifest", "summary", "counts"):
        assert os.path.isfile(os.path.join(out, RUN_FILES[name]))
    replicate = os.path.join(out, RUN_FILES["replicate_dir"].format(index=1))
    assert sorted(os.listdir(replicate)) == ["events.csv", "lineage.csv", "snapshot_0000.csv", "snapshot_0001.csv"]
    with open(os.path.join(out, RUN_FILES["summary"])) as handle:
        summary = json.load(handle)
    assert [entry["replicate"] for entry in summary["replicates"]] == [0, 1]
    assert summary["replicates"][0]["final_count"] == 10


def test_simulate_is_reproducible(tmp_path):
    """Test byte-identical snapshots across two runs with one seed"""
    _, first = _simulate(tmp_path, "first")
    _, second = _simulate(tmp_path, "second")
    snapshot = os.path.join(RUN_FILES["replicate_dir"].format(index=0), RUN_FILES["snapshot"].format(index=1))
    with open(os.path.join(first, snapshot), "rb") as a, open(os.path.join(second, snapshot), "rb") as b:
        assert a.read() == b.read()


def test_seed_override_changes_the_run(tmp_path):
    """Test that --seed replaces the configured seed"""
    config = _write(tmp_path / "run.json", MORAN)
    out = str(tmp_path / "seeded")
    assert main(["simulate", "--config", config, "--out", out, "--seed", "99", "--workers", "1"]) == EXIT_OK
    with open(os.path.join(out, RUN_FILES["summary"])) as handle:
        assert json.load(handle)["seed"] == 99


def test_malformed_config_writes_nothing(tmp_path):
    """Test exit code 2 and an untouched output directory for a bad config"""
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "model": {"preset": "moran", "colour": 1}\n}\n')
    out = tmp_path / "never"
    assert main(["simulate", "--config", str(bad), "--out", str(out)]) == EXIT_CONFIG_ERROR
    assert not out.exists()
    assert main(["simulate", "--config", str(tmp_path / "absent.json")]) == EXIT_CONFIG_ERROR


def test_particle_cap_exit_code(tmp_path):
    """Test exit code 3 when immigration outgrows the cap"""
    data = {
        "model": {"lam": 1.0,
                  "initial": {"types": [{"allele": 0, "count": 1}]},
                  "mechanisms": [{"kind": "immigration",
                                  "sources": [{"rate": 500.0, "types": [{"allele": 0}]}]}]},
        "engine": {"t_end": 1.0, "particle_cap": 3},
    }
    code, _ = _simulate(tmp_path, "capped", data)
    assert code == EXIT_PARTICLE_CAP


def test_genealogy_exports_trees(tmp_path):
    """Test Newick and coalescence outputs of a finished run"""
    _, out = _simulate(tmp_path)
    assert main(["genealogy", out, "--n", "3"]) == EXIT_OK
    with open(os.path.join(out, RUN_FILES["newick"])) as handle:
        lines = [line for line in handle.read().splitlines() if line]
    assert len(lines) >= 2
    assert all(line.endswith(";") for line in lines)
    with open(os.path.join(out, RUN_FILES["coalescence"])) as handle:
        statistics = json.load(handle)
    assert statistics["sample_size"] == 3
    assert statistics["n_trees"] == 2


def test_genealogy_input_errors(tmp_path):
    """Test exit code 2 for missing runs, missing lineage and oversized samples"""
    assert main(["genealogy", str(tmp_path / "nowhere"), "--n", "2"]) == EXIT_CONFIG_ERROR
    _, out = _simulate(tmp_path)
    assert main(["genealogy", out, "--n", "50"]) == EXIT_CONFIG_ERROR
    assert main(["genealogy", out, "--n", "0"]) == EXIT_CONFIG_ERROR
    os.remove(os.path.join(out, RUN_FILES["replicate_dir"].format(index=0), RUN_FILES["lineage"]))
    assert main(["genealogy", out, "--n", "2"]) == EXIT_CONFIG_ERROR


def test_unknown_suite(tmp_path):
    """Test exit code 2 for an unknown suite name"""
    assert main(["verify", "everything", "--out", str(tmp_path)]) == EXIT_CONFIG_ERROR


def test_verify_writes_reports(tmp_path):
    """Test the report table and summary of a small suite"""
    out = str(tmp_path / "verify")
    code = main(["verify", "poisson-identities", "--reps", "500", "--seed", "1", "--workers", "1", "--out", out])
    assert code in (EXIT_OK, EXIT_TEST_FAILURE)
    with open(os.path.join(out, RUN_FILES["reports"])) as handle:
        rows = handle.read().splitlines()
    assert rows[0].startswith("test,statistic,threshold")
    assert len(rows) == 16
    with open(os.path.join(out, RUN_FILES["summary"])) as handle:
        assert json.load(handle)["passed"] == (code == EXIT_OK)


def test_identities_command(tmp_path):
    """Test the identity table"""
    out = str(tmp_path / "identities")
    code = main(["identities", "--reps", "500", "--out", out])
    assert code in (EXIT_OK, EXIT_TEST_FAILURE)
    assert os.path.isfile(os.path.join(out, RUN_FILES["identities"]))


def test_parser_requires_a_command():
    """Test argparse usage errors"""
    with pytest.raises(SystemExit):
        main([])
