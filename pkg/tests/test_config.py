# -*- coding: utf-8 -*-
"""
配置合并与日志工具测试
"""

import json
import logging

import pytest

from src.utils.config import Config
from src.utils.errors import ConfigError, DataError, FcmError, NumericalError, ShapeError, UsageError
from src.utils.logger import JsonlWriter, get_logger, setup_logging


class TestResolve:
    def test_defaults(self):
        config = Config.resolve()
        assert config["model"]["architecture"] == "gin-st-fps"
        assert config["training"]["epochs"] == 150
        assert config["dataset"]["split_fractions"] == [0.5, 0.25, 0.25]

    def test_precedence(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"training": {"epochs": 20, "lr": 0.01}, "model": {"k": 7}}))
        config = Config.resolve(path, ["training.epochs=30", "model.k=5"], {"training": {"epochs": 40, "lr": None}})
        assert config["training"]["epochs"] == 40
        assert config["training"]["lr"] == 0.01
        assert config["model"]["k"] == 5

    def test_override_values_parse_as_json(self):
        config = Config.resolve(overrides=["training.resample_each_epoch=false", "model.architecture=st",
                                           "model.asap_targets=[10, 5]"])
        assert config["training"]["resample_each_epoch"] is False
        assert config["model"]["architecture"] == "st"
        assert config["model"]["asap_targets"] == [10, 5]

    def test_defaults_are_not_mutated(self):
        Config.resolve(overrides=["training.epochs=3"])
        assert Config.TRAINING_CONFIG["epochs"] == 150

    @pytest.mark.parametrize("override", ["training.nope=1", "nosection.k=1", "epochs=3", "training.epochs"])
    def test_bad_overrides(self, override):
        with pytest.raises(ConfigError):
            Config.resolve(overrides=[override])

    @pytest.mark.parametrize("override", ["model.hidden_dim=abc", "training.resample_each_epoch=1",
                                          "training.lr=\"fast\"", "dataset.split_fractions=0.5",
                                          "model.architecture=3", "model.k=2.5"])
    def test_override_type_mismatch_names_key(self, override):
        key = override.split("=", 1)[0]
        with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
            Config.resolve(overrides=[override])

    def test_numeric_overrides_are_coerced(self):
        config = Config.resolve(overrides=["training.events_per_sample=5e4", "training.lr=1"])
        assert config["training"]["events_per_sample"] == 50000
        assert isinstance(config["training"]["events_per_sample"], int)
        assert config["training"]["lr"] == 1.0
        assert isinstance(config["training"]["lr"], float)

    def test_file_value_type_checked(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"model": {"heads": "four"}}))
        with pytest.raises(ConfigError, match=r"model\.heads"):
            Config.resolve(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="不存在"):
            Config.resolve(tmp_path / "missing.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            Config.resolve(path)

    def test_write_resolved(self, tmp_path):
        config = Config.resolve(overrides=["model.k=3"])
        path = Config.write_resolved(config, tmp_path / "run")
        assert json.loads(path.read_text())["model"]["k"] == 3


def test_exit_codes():
    assert UsageError("x").exit_code == 1
    assert ConfigError("x").exit_code == 1
    assert DataError("x").exit_code == 2
    assert ShapeError("x").exit_code == 3
    assert NumericalError("x").exit_code == 3
    assert isinstance(DataError("x"), ValueError)
    assert issubclass(ConfigError, FcmError)


def test_logger_writes_run_log(tmp_path):
    setup_logging(tmp_path)
    logger = get_logger("test")
    assert logger.name == "fcm.test"
    logger.info("hello log")
    for handler in logging.getLogger("fcm").handlers:
        handler.flush()
    assert "hello log" in (tmp_path / "run.log").read_text(encoding="utf-8")


def test_jsonl_writer(tmp_path):
    writer = JsonlWriter(tmp_path / "log.jsonl")
    writer.write({"epoch": 0, "lr": 0.001})
    writer.write({"epoch": 1, "lr": 0.0006})
    records = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in records] == [0, 1]
    JsonlWriter(None).write({"ignored": True})
