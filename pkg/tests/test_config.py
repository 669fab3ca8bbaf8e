"""Run configuration document."""

import io
import json

import pytest

from tcorca.causal import CausalDiscoveryConfig
from tcorca.config import (
    CONFIG_FORMAT_VERSION,
    RunConfig,
    dump_config,
    load_config,
)
from tcorca.errors import FormatVersionError, InvalidSpec
from tcorca.invariant import FccgConfig


def test_defaults_round_trip_byte_identically():
    config = RunConfig()
    text = dump_config(config)
    back = load_config(io.StringIO(text))
    assert back == config
    assert dump_config(back) == text


def test_non_default_values_survive_the_round_trip():
    doc = {
        "seed": 7,
        "fccg": {"fitness_min": 0.8, "max_delay": 3,
                 "train_range": [0, 1200]},
        "scenario": {"n_channels": 12, "anomaly_kinds": ["spike"]},
        "bench": {"methods": ["tcorca", "ig"], "sweep": [2, 5], "jobs": 2},
        "rca": {"method": "lbp-ig", "top_n": 3},
    }
    config = RunConfig.from_json(doc)
    assert config.seed == 7
    assert config.fccg.train_range == (0, 1200)
    assert config.scenario.anomaly_kinds == ("spike",)
    assert config.bench.methods == ("tcorca", "ig")
    assert config.bench.sweep == (2, 5)
    assert config.rca.method == "lbp-ig"
    back = load_config(io.StringIO(dump_config(config)))
    assert back == config


def test_unknown_keys_are_rejected_everywhere():
    with pytest.raises(InvalidSpec, match="unknown config keys"):
        RunConfig.from_json({"sede": 1})
    with pytest.raises(InvalidSpec, match="unknown keys in fccg"):
        RunConfig.from_json({"fccg": {"fitness": 0.7}})
    with pytest.raises(InvalidSpec, match="must be an object"):
        RunConfig.from_json({"detect": [150]})


def test_format_version_is_checked():
    doc = RunConfig().to_json()
    assert doc["format_version"] == CONFIG_FORMAT_VERSION
    doc["format_version"] = 99
    with pytest.raises(FormatVersionError):
        RunConfig.from_json(doc)


def test_section_validation():
    with pytest.raises(InvalidSpec, match="impute"):
        RunConfig.from_json({"preprocess": {"impute": "cubic"}})
    with pytest.raises(InvalidSpec, match="smooth_window"):
        RunConfig.from_json({"preprocess": {"smooth_window": 0}})
    with pytest.raises(InvalidSpec, match="method"):
        RunConfig.from_json({"rca": {"method": "oracle"}})
    with pytest.raises(InvalidSpec, match="top_n"):
        RunConfig.from_json({"rca": {"top_n": 0}})
    with pytest.raises(InvalidSpec, match="benchmark method"):
        RunConfig.from_json({"bench": {"methods": ["psychic"]}})
    with pytest.raises(InvalidSpec, match="n_seeds"):
        RunConfig.from_json({"bench": {"n_seeds": 0}})
    with pytest.raises(InvalidSpec, match="jobs"):
        RunConfig.from_json({"bench": {"jobs": 0}})


def test_benchmark_config_assembly():
    config = RunConfig.from_json({
        "bench": {"train_frac": 0.5},
        "rca": {"k_sigma": 4.0},
        "detect": {"system_threshold": 0.1, "break_ratio_min": 0.3},
        "fccg": {"fitness_min": 0.75},
        "causal": {"tau_max": 6},
    })
    bench = config.benchmark_config()
    assert bench.train_frac == 0.5
    assert bench.k_sigma == 4.0
    assert bench.system_threshold == 0.1
    assert bench.break_ratio_min == 0.3
    assert bench.fccg == FccgConfig(fitness_min=0.75)
    assert bench.causal == CausalDiscoveryConfig(tau_max=6)


def test_missing_sections_take_defaults():
    config = RunConfig.from_json({"seed": 3})
    assert config == RunConfig(seed=3)
    assert config.detect.window == 150
    assert config.rca.method == "tcorca"


def test_load_config_accepts_paths(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(dump_config(RunConfig(seed=11)))
    assert load_config(path).seed == 11
    with pytest.raises(json.JSONDecodeError):
        path.write_text("{not json")
        load_config(path)
