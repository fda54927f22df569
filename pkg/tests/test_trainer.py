# -*- coding: utf-8 -*-
"""
训练器测试：批次构造、标签平滑、训练循环的确定性与日志
"""

import json
from dataclasses import replace

import numpy as np
import pytest
import torch

from conftest import small_model_config
from src.architectures.model_zoo import ModelConfig, build_model, load_model
from src.scripts.synthetic import SynthConfig, generate_dataset
from src.training.optim import adamw_step, build_optimizer
from src.training.trainer import (PreparedSample, TrainConfig, batch_loss, make_batch, prepare_samples,
                                  smooth_targets, train, validation_mean_f1)
from src.training.trainer_manager import ExperimentManager
from src.utils.errors import ConfigError


def _prepared(n, n_features=3, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.zeros(n, dtype=np.int64)
    labels[:2] = 1
    return PreparedSample(f"s{n}", rng.normal(size=(n, n_features)).astype(np.float32), labels)


class TestMakeBatch:
    def test_small_sample_keeps_all_events(self):
        cfg = TrainConfig(events_per_sample=50, jitter_scale=0.0)
        item = make_batch([_prepared(10)], cfg, np.random.default_rng(0))[0]
        np.testing.assert_array_equal(item.indices, np.arange(10))

    def test_subsample_without_replacement(self):
        cfg = TrainConfig(events_per_sample=60)
        item = make_batch([_prepared(120)], cfg, np.random.default_rng(0))[0]
        assert item.events.shape == (60, 3)
        assert len(np.unique(item.indices)) == 60

    def test_zero_jitter_keeps_values(self):
        sample = _prepared(10)
        cfg = TrainConfig(events_per_sample=50, jitter_scale=0.0)
        item = make_batch([sample], cfg, np.random.default_rng(0))[0]
        np.testing.assert_array_equal(item.events.numpy(), sample.events)

    def test_jitter_is_small(self):
        sample = _prepared(2000)
        cfg = TrainConfig(events_per_sample=5000, jitter_scale=0.01)
        item = make_batch([sample], cfg, np.random.default_rng(0))[0]
        noise = item.events.numpy() - sample.events
        assert noise.std() == pytest.approx(0.01, rel=0.1)

    def test_smoothed_targets(self):
        cfg = TrainConfig(events_per_sample=50, label_smoothing_eps=0.1)
        item = make_batch([_prepared(10)], cfg, np.random.default_rng(0))[0]
        assert set(np.round(item.targets.numpy(), 6).tolist()) == {0.95, 0.05}

    def test_fixed_indices_are_reused(self):
        cfg = TrainConfig(events_per_sample=5)
        fixed = {"s20": np.array([1, 3, 5, 7, 9])}
        item = make_batch([_prepared(20)], cfg, np.random.default_rng(0), fixed)[0]
        np.testing.assert_array_equal(item.indices, fixed["s20"])


def test_smooth_targets_without_smoothing():
    np.testing.assert_allclose(smooth_targets(np.array([0, 1]), 0.0), [0.0, 1.0])


def test_invalid_train_config():
    with pytest.raises(ConfigError):
        TrainConfig(schedule="linear")
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


def test_prepare_samples_standardizes(small_dataset):
    prepared = prepare_samples(small_dataset, "train")
    assert len(prepared) == 4
    stacked = np.concatenate([p.events for p in prepared])
    np.testing.assert_allclose(stacked.mean(axis=0), 0.0, atol=1e-5)


def test_training_is_deterministic(small_dataset, quick_train_config):
    reports = []
    for _ in range(2):
        model = build_model(small_model_config("mlp-mean"))
        reports.append(train(model, small_dataset, quick_train_config))
    assert reports[0].train_loss == reports[1].train_loss
    assert reports[0].val_mean_f1 == reports[1].val_mean_f1


def test_training_writes_log_and_checkpoint(tmp_path, small_dataset, quick_train_config):
    model = build_model(small_model_config("gin-st-fps"))
    report = train(model, small_dataset, quick_train_config, out_dir=tmp_path)

    lines = (tmp_path / "train_log.jsonl").read_text().splitlines()
    records = [json.loads(line) for line in lines]
    assert [r["epoch"] for r in records] == [0, 1]
    assert records[0]["lr"] == pytest.approx(0.001)
    assert records[1]["lr"] == pytest.approx(0.0006)
    assert all(np.isfinite(r["train_loss"]) for r in records)

    assert report.best_epoch in (0, 1)
    assert report.best_val_mean_f1 == max(report.val_mean_f1)
    loaded, stats = load_model(report.checkpoint)
    assert loaded.config.architecture == "gin-st-fps"
    assert stats["markers"] == small_dataset.canonical_markers
    assert (tmp_path / "train_report.json").exists()


def test_single_draw_mode(small_dataset, quick_train_config):
    cfg = replace(quick_train_config, resample_each_epoch=False, events_per_sample=30)
    report = train(build_model(small_model_config("gat")), small_dataset, cfg)
    assert len(report.train_loss) == 2


def test_experiment_manager_runs_each_seed(tmp_path, small_dataset, quick_train_config):
    section = small_model_config("mlp").to_dict()
    manager = ExperimentManager(small_dataset, section, replace(quick_train_config, epochs=1), out_dir=tmp_path)
    summaries = manager.zoo(["mlp", "st"], seeds=[0, 1])
    assert set(summaries) == {"mlp", "st"}
    assert summaries["mlp"]["runs"] == 2
    assert (tmp_path / "st" / "seed_1" / "metrics.json").exists()
    assert (tmp_path / "results_table.txt").exists()


def test_masked_feature_experiment(tmp_path, small_dataset, quick_train_config):
    section = small_model_config("mlp").to_dict()
    manager = ExperimentManager(small_dataset, section, replace(quick_train_config, epochs=1), out_dir=tmp_path)
    masked = small_dataset.canonical_markers[:2]
    summaries = manager.masked_feature_eval(["gin"], masked, seeds=[0])
    assert summaries["gin"]["runs"] == 1
    saved = json.loads((tmp_path / "mask_results.json").read_text())
    assert saved["masked_markers"] == masked
    model, _ = load_model(tmp_path / "masked_gin" / "seed_0")
    assert model.config.in_features == 3


def test_best_checkpoint_reproduces_logged_f1(small_dataset, quick_train_config):
    model = build_model(small_model_config("gin-st-fps"))
    report = train(model, small_dataset, quick_train_config)
    columns = small_dataset.feature_indices(model.config.feature_mask)
    again = validation_mean_f1(model, prepare_samples(small_dataset, "val"), columns)
    assert again == pytest.approx(report.best_val_mean_f1, abs=1e-6)


@pytest.mark.parametrize("trial", range(10))
def test_small_step_decreases_loss(trial, small_dataset):
    model = build_model(small_model_config("mlp", seed=trial))
    cfg = TrainConfig(events_per_sample=60, jitter_scale=0.0, progress_bar=False)
    batch = make_batch(prepare_samples(small_dataset, "train")[:2], cfg, np.random.default_rng(trial))
    columns = small_dataset.feature_indices()
    optimizer = build_optimizer(model, lr=1e-5)
    before = batch_loss(model, batch, columns)
    optimizer.zero_grad()
    before.backward()
    adamw_step(optimizer, 1e-5)
    with torch.no_grad():
        after = batch_loss(model, batch, columns)
    assert float(after) < float(before)


@pytest.mark.slow
def test_separable_data_is_learned():
    synth = SynthConfig(n_events=300, n_features=4, n_healthy_clusters=1, blast_fraction=0.1,
                        population_shift_scale=0.0, blast_offset_range=(6.0, 8.0), n_discriminative=4,
                        sigma_range=(0.5, 0.6), seed=1)
    dataset = generate_dataset(synth, 20, seed=2)
    cfg = TrainConfig(batch_size=1, events_per_sample=300, epochs=30, lr=1e-2, lr_min=1e-3,
                      progress_bar=False, seed=0)
    model = build_model(ModelConfig(architecture="mlp", in_features=4, layers=2, hidden_dim=16, heads=4))
    report = train(model, dataset, cfg)
    assert report.best_val_mean_f1 >= 0.99
