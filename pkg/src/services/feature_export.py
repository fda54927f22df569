# -*- coding: utf-8 -*-
"""
特征导出服务
用途：取模型预测头之前的逐事件激活，用两个主成分投影，导出CSV（x, y, label）和散点图
"""

from pathlib import Path
from typing import Tuple, Union

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import torch
from sklearn.decomposition import PCA

from ..architectures.model_zoo import EventClassifier, forward_sample
from ..scripts.dataset_loader import FcmDataset, FcmSample
from ..utils.errors import DataError


def pca_projection(features: Union[np.ndarray, torch.Tensor]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    两主成分投影
    参数：
        features: (n, d) 激活
    返回值：(投影 (n, 2), 主成分 (2, d), 各主成分方差)；主成分按特征值降序，
           符号取使每个主成分中绝对值最大的载荷为正
    """
    if torch.is_tensor(features):
        features = features.detach().cpu().numpy()
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DataError(f"PCA投影至少需要2个事件, 实际形状 {x.shape}")
    if x.shape[1] < 2:
        raise DataError(f"PCA投影至少需要2维特征, 实际 {x.shape[1]}")

    pca = PCA(n_components=2, svd_solver="full")
    projected = pca.fit_transform(x)
    components = pca.components_.copy()
    for i in range(2):
        if components[i, np.argmax(np.abs(components[i]))] < 0:
            components[i] *= -1.0
            projected[:, i] *= -1.0
    return projected, components, pca.explained_variance_


def pca_features_export(model: EventClassifier, dataset: FcmDataset, sample: FcmSample,
                        out_dir: Union[str, Path], plot: bool = True) -> pd.DataFrame:
    """
    导出单个样本的PCA特征投影
    参数：
        model: 模型
        dataset: 提供标准化统计量的数据集
        sample: 样本
        out_dir: 输出目录，写入 pca_<样本编号>.csv 与 pca_<样本编号>.png
        plot: 是否绘制散点图
    返回值：包含 x、y、label 列的 DataFrame
    """
    _, features = forward_sample(model, sample, dataset, mode="eval", return_features=True)
    projected, _, _ = pca_projection(features)
    labels = sample.labels if sample.labels is not None else np.zeros(sample.n_events, dtype=np.int64)
    frame = pd.DataFrame({"x": projected[:, 0], "y": projected[:, 1], "label": labels})

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out_dir / f"pca_{sample.sample_id}.csv", index=False)
    if plot:
        plot_projection(frame, out_dir / f"pca_{sample.sample_id}.png",
                        title=f"{model.config.architecture} - {sample.sample_id}")
    return frame


def plot_projection(frame: pd.DataFrame, path: Union[str, Path], title: str = "") -> Path:
    """散点图：健康细胞灰色，原始细胞红色（绘制在上层）"""
    fig, ax = plt.subplots(figsize=(6, 6))
    healthy = frame[frame["label"] == 0]
    blasts = frame[frame["label"] == 1]
    ax.scatter(healthy["x"], healthy["y"], s=2, c="lightgrey", label="healthy")
    ax.scatter(blasts["x"], blasts["y"], s=4, c="red", label="blast")
    ax.set_xlabel("PC1")
    ax.set_ylabel("PC2")
    ax.set_title(title)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
