# -*- coding: utf-8 -*-
"""
PCA特征导出测试
"""

import numpy as np
import pandas as pd
import pytest

from conftest import small_model_config
from src.architectures.model_zoo import build_model
from src.services.feature_export import pca_features_export, pca_projection
from src.utils.errors import DataError


def test_projection_orders_components_by_variance(rng):
    x = np.column_stack([rng.normal(scale=5.0, size=200), rng.normal(scale=1.0, size=200),
                         rng.normal(scale=0.1, size=200)])
    projected, components, variance = pca_projection(x)
    assert projected.shape == (200, 2)
    assert variance[0] > variance[1]
    np.testing.assert_allclose(np.abs(components[0]), [1, 0, 0], atol=0.05)


def test_sign_convention(rng):
    x = rng.normal(size=(50, 4))
    _, components, _ = pca_projection(x)
    for row in components:
        assert row[np.argmax(np.abs(row))] > 0
    _, flipped, _ = pca_projection(-x)
    np.testing.assert_allclose(flipped, components, atol=1e-8)


def test_projection_needs_two_events():
    with pytest.raises(DataError):
        pca_projection(np.ones((1, 3)))


def test_export_writes_csv_and_plot(tmp_path, small_dataset):
    model = build_model(small_model_config("st-fps"))
    sample = small_dataset.samples("test")[0]
    frame = pca_features_export(model, small_dataset, sample, tmp_path)
    assert list(frame.columns) == ["x", "y", "label"]
    assert len(frame) == sample.n_events
    saved = pd.read_csv(tmp_path / f"pca_{sample.sample_id}.csv")
    np.testing.assert_array_equal(saved["label"].to_numpy(), sample.labels)
    assert (tmp_path / f"pca_{sample.sample_id}.png").stat().st_size > 0


def test_export_without_plot(tmp_path, small_dataset):
    model = build_model(small_model_config("mlp"))
    sample = small_dataset.samples("test")[0]
    pca_features_export(model, small_dataset, sample, tmp_path, plot=False)
    assert not (tmp_path / f"pca_{sample.sample_id}.png").exists()
