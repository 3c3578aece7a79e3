import sys
import os
import json
import pytest
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from models import RunConfig
from utils.core import AlleleField, ConstantField
from utils.mechanisms import ContinuousBirth, InstantDeath, PairwiseReplacement, Thinning
from validation import (ConfigurationError, apply_overrides, build_field, build_model_spec, load_run_config,
                        locate_key, parse_run_config, validate_run_config)

EXPLICIT = {
    "model": {
        "name": "toy",
        "lam": 4.0,
        "domain": {"n_alleles": 2},
        "initial": {"kind": "uniform-levels", "types": [{"allele": 0, "count": 3}, {"allele": 1, "count": 2}]},
        "mechanisms": [
            {"kind": "instant-death", "d0": [0.5, 1.0]},
            {"kind": "continuous-birth", "k": 2, "r": 0.3},
            {"kind": "pairwise-replacement", "gamma": 1.0, "mutation": 0.1},
            {"kind": "thinning", "events": [{"p": 0.2, "rate": 1.0}]},
        ],
    },
    "engine": {"t_end": 2.0, "snapshots": [1.0], "seed": 3},
}


def test_explicit_model_builds_mechanisms():
    """Test an explicit mechanism list turned into a ModelSpec"""
    spec = build_model_spec(RunConfig.model_validate(EXPLICIT))
    assert spec.name == "toy"
    assert spec.lam == 4.0
    assert spec.snapshot_times == (1.0, 2.0)
    assert [type(m) for m in spec.mechanisms] == [InstantDeath, ContinuousBirth, PairwiseReplacement, Thinning]
    assert len(spec.initial.types) == 5


def test_preset_model_builds():
    """Test a preset section with a lambda override"""
    data = {"model": {"preset": "pure-death", "params": {"N0": 10}, "lam": 2.0}, "engine": {"t_end": 0.5}}
    spec = build_model_spec(RunConfig.model_validate(data))
    assert spec.name == "pure-death"
    assert spec.lam == 2.0


def test_build_field():
    """Test scalar and per-allele rate fields"""
    assert isinstance(build_field(1.5), ConstantField)
    assert isinstance(build_field([1.0, 2.0]), AlleleField)


def test_schema_violations():
    """Test unknown keys, bad presets and conflicting model sources"""
    ok, error = validate_run_config({"model": {"preset": "moran"}, "colour": "blue"})
    assert not ok and "colour" in error
    ok, error = validate_run_config({"model": {"preset": "wright-fisher"}})
    assert not ok
    ok, _ = validate_run_config({"model": {"preset": "moran", "initial": {"types": [{"count": 2}]}}})
    assert not ok
    ok, _ = validate_run_config({"engine": {"t_end": 1.0, "snapshots": [2.0]}})
    assert not ok
    ok, _ = validate_run_config({"verify": {"suite": "bogus"}})
    assert not ok
    assert validate_run_config({"model": {"preset": "moran"}}) == (True, None)


def test_errors_carry_file_and_line():
    """Test that a schema error points at the offending line"""
    text = '{\n  "model": {\n    "preset": "moran",\n    "bogus": 1\n  }\n}\n'
    with pytest.raises(ConfigurationError) as caught:
        parse_run_config(text, "run.json")
    assert caught.value.line == 4
    assert str(caught.value).startswith("run.json:4:")
    with pytest.raises(ConfigurationError) as caught:
        parse_run_config('{\n  "model": ,\n}', "broken.json")
    assert caught.value.line == 2


def test_locate_key_follows_nesting():
    """Test that nested keys resolve inside their own block"""
    text = '{\n "engine": {"seed": 1},\n "verify": {\n  "reps": 0\n }\n}'
    assert locate_key(text, ("verify", "reps")) == 4


def test_model_rejected_by_builder():
    """Test that builder errors become configuration errors"""
    data = {"model": {"preset": "moran", "params": {"N": 1}}}
    with pytest.raises(ConfigurationError):
        build_model_spec(RunConfig.model_validate(data))
    with pytest.raises(ConfigurationError):
        build_model_spec(RunConfig())


def test_overrides():
    """Test command-line overrides of seed, replicates and output directory"""
    config = apply_overrides(RunConfig.model_validate(EXPLICIT), seed=9, reps=4, workers=2, out="somewhere")
    assert config.engine.seed == 9
    assert config.engine.replicates == 4
    assert config.verify.reps == 4
    assert config.engine.workers == 2
    assert config.outputs.directory == "somewhere"
    with pytest.raises(ConfigurationError):
        apply_overrides(config, seed=-1)


def test_load_run_config(tmp_path):
    """Test loading from disk and the missing-file error"""
    path = tmp_path / "run.json"
    path.write_text(json.dumps(EXPLICIT, indent=2))
    assert load_run_config(str(path)).model.name == "toy"
    with pytest.raises(ConfigurationError):
        load_run_config(str(tmp_path / "absent.json"))


CONFIG_DIR = os.path.join(os.path.dirname(__file__), '..', 'configs')


@pytest.mark.parametrize("name", sorted(os.listdir(CONFIG_DIR)))
def test_shipped_configs_are_valid(name):
    """Test that every example configuration loads and builds"""
    config = load_run_config(os.path.join(CONFIG_DIR, name))
    if config.model is not None:
        spec = build_model_spec(config)
        assert spec.t_end == config.engine.t_end
