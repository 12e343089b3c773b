import pytest

from wtdebias import config as cfgmod
from wtdebias.config import ConfigError, RunConfig


def test_defaults_validate():
    cfg = cfgmod.from_dict({})
    assert cfg == RunConfig() and cfg.bucketing.K == 4 and cfg.dadf.loss.eta == 0.10


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="sed"):
        cfgmod.from_dict({"sed": 1})
    with pytest.raises(ConfigError, match=r"dadf\.loss"):
        cfgmod.from_dict({"dadf": {"loss": {"etaa": 0.1}}})


def test_bad_values_rejected():
    with pytest.raises(ConfigError):
        cfgmod.from_dict({"variant": "no_such"})
    with pytest.raises(ConfigError):
        cfgmod.from_dict({"dadf": {"loss": {"beta": -1.0}}})
    with pytest.raises(ConfigError):
        cfgmod.from_dict({"data": {"source": "csv"}})


def test_yaml_roundtrip(tmp_path):
    cfg = cfgmod.from_dict({"seed": 3, "data": {"n": 500, "generator": {"skip_prob": 0.0}},
                            "eval": {"sweep_K": [2, 3]}})
    cfgmod.dump_yaml(cfg, tmp_path / "c.yaml")
    assert cfgmod.load(tmp_path / "c.yaml") == cfg


def test_json_and_parse_errors(tmp_path):
    (tmp_path / "c.json").write_text('{"seed": 5}')
    assert cfgmod.load(tmp_path / "c.json").seed == 5
    (tmp_path / "bad.yaml").write_text("seed: [1,\n")
    with pytest.raises(ConfigError):
        cfgmod.load(tmp_path / "bad.yaml")
    with pytest.raises(ConfigError):
        cfgmod.load(tmp_path / "missing.yaml")
