from __future__ import annotations

import pytest

from tirkit.config import load_config, make_backend
from tirkit.errors import ConfigError


def write_config(tmp_path, text):
    path = tmp_path / "config.yaml"
    path.write_text(text, encoding="utf-8")
    return str(path)


def config_error(tmp_path, text) -> ConfigError:
    with pytest.raises(ConfigError) as exc_info:
        load_config(write_config(tmp_path, text))
    return exc_info.value


def test_scripted_without_scenario_file(tmp_path):
    err = config_error(tmp_path, "backend:\n  kind: scripted\n")
    assert err.field == "backend.scenario_file"


def test_scripted_with_missing_scenario_file(tmp_path):
    err = config_error(tmp_path, "backend:\n  kind: scripted\n  scenario_file: /nope.jsonl\n")
    assert err.field == "backend.scenario_file"


def test_http_without_base_url(tmp_path):
    err = config_error(tmp_path, "backend:\n  kind: http\n")
    assert err.field == "backend.base_url"


def test_unknown_backend_kind(tmp_path):
    err = config_error(tmp_path, "backend:\n  kind: carrier-pigeon\n")
    assert err.field == "backend.kind"


def test_unknown_key_rejected_with_path(tmp_path):
    err = config_error(tmp_path, "backend:\n  kind: http\n  base_url: http://x\n  typo_key: 1\n")
    assert err.field == "backend.typo_key"


def test_bad_mode_name(tmp_path):
    err = config_error(tmp_path, "modes:\n  warp: {temperature: 1.0}\n")
    assert err.field == "modes.warp"


def test_bad_sampling_value_names_leaf_field(tmp_path):
    err = config_error(tmp_path, "modes:\n  cot: {top_p: 2.0}\n")
    assert err.field == "modes.cot.top_p"


def test_bad_genselect_bounds(tmp_path):
    err = config_error(tmp_path, "genselect:\n  min_group: 1\n")
    assert err.field == "genselect"


def test_bad_scheduler_threshold(tmp_path):
    err = config_error(tmp_path, "scheduler:\n  batch_size: 2\n  agreement_threshold: 5\n")
    assert err.field == "scheduler"


def test_negative_sandbox_timeout(tmp_path):
    err = config_error(tmp_path, "sandbox:\n  timeout_ms: 0\n")
    assert err.field == "sandbox.timeout_ms"


def test_non_integer_seed(tmp_path):
    err = config_error(tmp_path, "seed: not-a-number\n")
    assert err.field == "seed"


def test_defaults_defer_backend_validation(tmp_path):
    config = load_config(None)
    with pytest.raises(ConfigError) as exc_info:
        make_backend(config)
    assert exc_info.value.field == "backend.scenario_file"


def test_valid_config_round_trip(tmp_path):
    scenario = tmp_path / "scenario.jsonl"
    scenario.write_text('{"match": {"kind": "prefix", "value": ""}, "segments": [["hi", 0]]}\n')
    config = load_config(
        write_config(
            tmp_path,
            f"seed: 9\nbackend:\n  kind: scripted\n  scenario_file: {scenario}\n"
            "modes:\n  tir: {max_tokens: 2048}\n"
            "scheduler: {batch_size: 4, agreement_threshold: 2}\n",
        )
    )
    assert config.seed == 9
    assert config.modes["tir"].max_tokens == 2048
    assert config.tir.params.max_tokens == 2048
    assert config.policy.batch_size == 4
    assert make_backend(config) is not None
