# -*- coding: utf-8 -*-
"""
测试公共夹具：小规模合成数据集、小模型配置和构造FCS字节流的辅助函数
"""

import sys
from pathlib import Path

import numpy as np
import pytest
import torch

# 添加项目根目录到Python路径
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.architectures.model_zoo import ModelConfig  # noqa: E402
from src.scripts.synthetic import SynthConfig, generate_dataset  # noqa: E402
from src.training.trainer import TrainConfig  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture
def small_synth_config():
    return SynthConfig(n_events=120, n_features=5, n_healthy_clusters=3, blast_fraction=0.05, seed=7)


@pytest.fixture
def small_dataset(small_synth_config):
    """8个样本、每个120个事件的合成数据集（划分 4/2/2）"""
    return generate_dataset(small_synth_config, n_samples=8, seed=3)


def small_model_config(architecture: str, in_features: int = 5, **overrides) -> ModelConfig:
    """桌面规模的模型配置：隐藏维度8、2层、k=4、诱导点4、ASAP目标 (12, 6)"""
    values = dict(architecture=architecture, in_features=in_features, layers=2, hidden_dim=8, heads=2, k=4,
                  inducing_points=4, fps_ratio=0.05, fps_min_count=4, pointnet_event_dim=16,
                  pointnet_global_dim=32, asap_targets=(12, 6), seed=0)
    values.update(overrides)
    return ModelConfig(**values)


@pytest.fixture
def quick_train_config():
    return TrainConfig(batch_size=2, events_per_sample=60, epochs=2, cosine_t=2, progress_bar=False, seed=0)
