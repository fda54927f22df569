# -*- coding: utf-8 -*-
"""
合成数据生成模块
用途：用高斯混合模型生成带稀有原始细胞（blast）群的类FCM样本，使完整流程可以在桌面规模上测试
"""

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
from tqdm import tqdm

from ..utils.config import Config
from ..utils.errors import DataError
from ..utils.logger import get_logger
from .dataset_loader import FcmDataset, FcmSample, save_sample_csv, write_manifest

logger = get_logger("synthetic")

MIN_BLAST_FRACTION = 0.0001
MAX_BLAST_FRACTION = 0.5


@dataclass
class SynthConfig:
    """
    合成数据配置
    用途：描述健康细胞簇数量、原始细胞比例、样本间整体平移幅度等生成参数
    """
    n_events: int = 5000
    n_features: int = 10
    n_healthy_clusters: int = 5
    blast_fraction: float = 0.01
    population_shift_scale: float = 1.0
    seed: int = 0
    cluster_spread: float = 6.0
    blast_offset_range: Tuple[float, float] = (2.0, 4.0)
    n_discriminative: int = 3       # 原始细胞在这些轴上偏离母簇 blast_offset_range 个σ
    weak_offset: float = 1.0        # 其余轴上的偏移（σ）
    marker_prefix: str = "M"
    sigma_range: Tuple[float, float] = field(default=(0.5, 1.5))

    def __post_init__(self):
        self.blast_offset_range = tuple(float(v) for v in self.blast_offset_range)
        self.sigma_range = tuple(float(v) for v in self.sigma_range)
        if self.n_events < 1 or self.n_features < 1 or self.n_healthy_clusters < 1:
            raise DataError(f"事件数、特征数和健康簇数必须为正数: n_events={self.n_events}, "
                            f"n_features={self.n_features}, n_healthy_clusters={self.n_healthy_clusters}")
        if not MIN_BLAST_FRACTION <= self.blast_fraction <= MAX_BLAST_FRACTION:
            raise DataError(f"blast_fraction 必须在 [{MIN_BLAST_FRACTION}, {MAX_BLAST_FRACTION}] 内, "
                            f"实际 {self.blast_fraction}")
        if self.population_shift_scale < 0:
            raise DataError(f"population_shift_scale 不能为负数: {self.population_shift_scale}")
        if not 0 <= self.n_discriminative <= self.n_features:
            raise DataError(f"n_discriminative 必须在 [0, {self.n_features}] 内, 实际 {self.n_discriminative}")

    @classmethod
    def from_config(cls, section: Dict[str, Any]) -> "SynthConfig":
        """由 Config 的 synth 分组构造，忽略不属于本类的键"""
        names = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in section.items() if k in names})

    @property
    def markers(self) -> List[str]:
        return [f"{self.marker_prefix}{i + 1}" for i in range(self.n_features)]

    def blast_count(self) -> int:
        """原始细胞数 = round(blast_fraction × n_events)，至少为1"""
        count = max(1, int(round(self.blast_fraction * self.n_events)))
        if count >= self.n_events:
            raise DataError(f"原始细胞数 {count} 不小于事件数 {self.n_events}")
        return count


def population_structure(config: SynthConfig) -> Dict[str, np.ndarray]:
    """
    由 config.seed 确定的群体结构：健康簇均值与σ、原始细胞母簇、均值与σ
    数据集种子（generate_dataset 的 seed）不改变这一基础布局，只派生各样本的整体平移、簇比例和噪声
    返回值：包含 healthy_means (c, F)、healthy_sigmas (c, F)、blast_parent、blast_mean (F,)、blast_sigma (F,) 的字典
    """
    rng = np.random.default_rng(config.seed)
    c, f = config.n_healthy_clusters, config.n_features
    low, high = config.sigma_range
    healthy_means = rng.uniform(-config.cluster_spread, config.cluster_spread, size=(c, f))
    healthy_sigmas = rng.uniform(low, high, size=(c, f))

    parent = int(rng.integers(0, c))
    axes = rng.permutation(f)[:config.n_discriminative]
    magnitude = np.full(f, config.weak_offset)
    magnitude[axes] = rng.uniform(*config.blast_offset_range, size=axes.shape[0])
    signs = rng.choice([-1.0, 1.0], size=f)
    # 原始细胞紧贴母簇：偏移以母簇各轴σ为单位
    blast_mean = healthy_means[parent] + signs * magnitude * healthy_sigmas[parent]
    blast_sigma = rng.uniform(low, high, size=f)
    return {
        "healthy_means": healthy_means,
        "healthy_sigmas": healthy_sigmas,
        "blast_parent": np.asarray(parent),
        "blast_mean": blast_mean,
        "blast_sigma": blast_sigma,
        "discriminative_axes": np.sort(axes),
    }


def _ball_shift(rng: np.random.Generator, dim: int, radius: float) -> np.ndarray:
    if radius == 0:
        return np.zeros(dim)
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    return direction * radius * rng.uniform() ** (1.0 / dim)


def generate_sample(config: SynthConfig, sample_seed: int, sample_id: str = None) -> FcmSample:
    """
    生成单个合成样本
    参数：
        config: 合成配置
        sample_seed: 样本种子，决定整体平移、各簇比例和噪声
        sample_id: 样本编号，默认 synth_<seed>
    返回值：FcmSample，标签标记原始细胞分量
    """
    n_blast = config.blast_count()
    structure = population_structure(config)
    rng = np.random.default_rng(sample_seed)

    shift = _ball_shift(rng, config.n_features, config.population_shift_scale)
    healthy_means = structure["healthy_means"] + shift
    blast_mean = structure["blast_mean"] + shift

    proportions = rng.dirichlet(np.full(config.n_healthy_clusters, 5.0))
    counts = rng.multinomial(config.n_events - n_blast, proportions)

    blocks = []
    for cluster, count in enumerate(counts):
        noise = rng.normal(size=(count, config.n_features))
        blocks.append(healthy_means[cluster] + noise * structure["healthy_sigmas"][cluster])
    blocks.append(blast_mean + rng.normal(size=(n_blast, config.n_features)) * structure["blast_sigma"])
    events = np.concatenate(blocks, axis=0)
    labels = np.concatenate([np.zeros(config.n_events - n_blast, dtype=np.int64),
                             np.ones(n_blast, dtype=np.int64)])

    # 打乱事件顺序，避免标签按块排列
    order = rng.permutation(config.n_events)
    metadata = {
        "generator": "synthetic",
        "sample_seed": int(sample_seed),
        "shift": shift.tolist(),
        "healthy_means": healthy_means.tolist(),
        "blast_mean": blast_mean.tolist(),
        "blast_parent": int(structure["blast_parent"]),
    }
    return FcmSample(events=events[order].astype(np.float32), markers=config.markers, labels=labels[order],
                     sample_id=sample_id or f"synth_{sample_seed}", metadata=metadata)


def generate_dataset(config: SynthConfig, n_samples: int, seed: int = 0,
                     progress_bar: bool = False) -> FcmDataset:
    """
    生成合成数据集
    参数：
        config: 合成配置
        n_samples: 样本数（至少4）
        seed: 数据集种子，派生各样本种子并决定划分
        progress_bar: 是否显示进度条
    返回值：按 50/25/25 划分的 FcmDataset
    """
    if n_samples < 4:
        raise DataError(f"合成数据集至少需要4个样本, 实际 {n_samples}")
    config.blast_count()
    sample_seeds = np.random.default_rng(seed).integers(0, 2 ** 31 - 1, size=n_samples)
    samples = [
        generate_sample(config, int(s), sample_id=f"sample_{i:03d}")
        for i, s in enumerate(tqdm(sample_seeds, desc="生成合成样本", disable=not progress_bar))
    ]
    dataset = FcmDataset.from_samples(samples, seed=seed, name=f"synthetic_{seed}")
    logger.info("合成数据集: %d 个样本, 划分 %s", n_samples, dataset.split_sizes())
    return dataset


def write_synthetic_dataset(dataset: FcmDataset, out_dir: Union[str, Path], config: SynthConfig = None) -> Path:
    """
    将合成数据集写为CSV样本和JSON清单（显式保存划分）
    参数：
        dataset: 合成数据集
        out_dir: 输出目录
        config: 生成配置（写入清单便于追溯）
    返回值：清单文件路径
    """
    out_dir = Path(out_dir)
    label_column = Config.DATASET_CONFIG["label_column"]
    paths = {}
    for sample_id in dataset.sample_ids:
        relative = Path("samples") / f"{sample_id}.csv"
        save_sample_csv(dataset.sample(sample_id), out_dir / relative, label_column=label_column)
        paths[sample_id] = relative.as_posix()
    extra = {"name": dataset.name}
    if config is not None:
        extra["synth_config"] = asdict(config)
    return write_manifest(out_dir, paths, dataset.canonical_markers, split=dataset.split,
                          label_column=label_column, extra=extra)


def most_discriminative_markers(dataset: FcmDataset, count: int = 3) -> List[str]:
    """
    按训练集上两类事件标准化均值之差的绝对值排序标记物
    参数：
        dataset: 带标签的数据集
        count: 返回的标记物数量
    返回值：区分度最高的 count 个标记物（并列时按规范顺序）
    """
    n_features = len(dataset.canonical_markers)
    pos_sum, neg_sum = np.zeros(n_features), np.zeros(n_features)
    pos_n = neg_n = 0
    for sample in dataset.samples("train"):
        if sample.labels is None:
            raise DataError(f"样本 {sample.sample_id} 没有标签")
        x = dataset.prepare(sample).astype(np.float64)
        positive = sample.labels == 1
        pos_sum += x[positive].sum(axis=0)
        neg_sum += x[~positive].sum(axis=0)
        pos_n += int(positive.sum())
        neg_n += int((~positive).sum())
    if pos_n == 0 or neg_n == 0:
        raise DataError("训练集中缺少某一类事件, 无法计算区分度")
    separation = np.abs(pos_sum / pos_n - neg_sum / neg_n)
    order = np.lexsort((np.arange(n_features), -separation))
    return [dataset.canonical_markers[i] for i in order[:count]]
