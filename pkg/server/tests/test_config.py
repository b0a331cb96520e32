import json

import pytest

from saic_server import ConfigError, ServerConfig, config_from_dict, load_config


def test_defaults_are_valid():
    config = ServerConfig()
    assert config.segmentation_model == "classical/otsu"
    assert config.embedding_model == "classical/histogram"
    assert config.generation_model == "classical/hfpaint"
    assert config.judge_model == "classical/seam"
    assert config.device == "cpu"
    assert config.max_concurrent == 4
    assert config.token is None


@pytest.mark.parametrize(
    "field",
    ["segmentation_model", "embedding_model", "generation_model", "judge_model"],
)
def test_every_endpoint_needs_a_model_id(field):
    with pytest.raises(ConfigError, match="model id"):
        ServerConfig(**{field: ""})
    with pytest.raises(ConfigError):
        ServerConfig(**{field: "   "})


@pytest.mark.parametrize(
    "kwargs",
    [
        {"max_concurrent": 0},
        {"max_concurrent": -2},
        {"max_concurrent": "4"},
        {"device": "tpu"},
        {"device": ""},
        {"port": 0},
        {"port": 70000},
    ],
)
def test_invalid_settings_rejected(kwargs):
    with pytest.raises(ConfigError):
        ServerConfig(**kwargs)


def test_cuda_device_accepted():
    assert ServerConfig(device="cuda:1").device == "cuda:1"


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown config keys"):
        config_from_dict({"max_concurent": 2})
    with pytest.raises(ConfigError, match="mapping"):
        config_from_dict([1, 2])


def test_from_dict_builds_config():
    config = config_from_dict({"token": "abc", "max_concurrent": 8})
    assert config.token == "abc"
    assert config.max_concurrent == 8


def test_load_config_yaml_and_json(tmp_path):
    yaml_path = tmp_path / "server.yaml"
    yaml_path.write_text("token: sekrit\nport: 9001\n", encoding="utf-8")
    config = load_config(yaml_path)
    assert config.token == "sekrit"
    assert config.port == 9001

    json_path = tmp_path / "server.json"
    json_path.write_text(json.dumps({"max_concurrent": 2}), encoding="utf-8")
    assert load_config(json_path).max_concurrent == 2


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(bad)
