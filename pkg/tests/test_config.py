from __future__ import annotations

import inspect

import pytest

from src.config import Config, config

PROPERTIES = [name for name, member in inspect.getmembers(Config) if isinstance(member, property)]


def _config(tmp_path, text: str) -> Config:
    path = tmp_path / "config.yaml"
    path.write_text(text, encoding="utf-8")
    return Config(path)


def test_repo_config_matches_the_defaults():
    assert config.alpha == 0.05
    assert config.coverage == "fixed2"
    assert config.instruments == ("AH", "EP")
    assert config.log_lambda_bounds == (-12.0, 12.0)
    assert config.export_config("anova")["filename"] == "anova_{name}.csv"


def test_empty_file_falls_back_to_defaults(tmp_path, monkeypatch):
    monkeypatch.delenv("LOG_LEVEL", raising=False)
    cfg = _config(tmp_path, "")
    assert cfg.ba_k == 2.0
    assert cfg.icc_threshold == 0.75
    assert cfg.reml_max_iter == 200
    assert cfg.simulation_mu == 50.0
    assert cfg.float_digits == 17
    assert cfg.log_level == "INFO"


def test_values_from_yaml_and_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("LOG_LEVEL", "DEBUG")
    cfg = _config(tmp_path, "analysis:\n  alpha: 0.01\n  instrument_a: XY\nmixed_model:\n  max_iter: 50\n")
    assert cfg.alpha == 0.01
    assert cfg.instruments == ("XY", "EP")
    assert cfg.reml_max_iter == 50
    assert cfg.log_level == "DEBUG"


def test_config_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        Config(tmp_path / "missing.yaml")
    with pytest.raises(ValueError, match="analysis"):
        _config(tmp_path, "analysis: 3\n")
    with pytest.raises(KeyError):
        _config(tmp_path, "").export_config("anova")


@pytest.mark.parametrize("name", PROPERTIES)
def test_properties_are_documented(name):
    doc = inspect.getdoc(getattr(Config, name))
    assert doc and ":rtype:" in doc
