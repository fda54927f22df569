# -*- coding: utf-8 -*-
"""
数据集加载模块
用途：定义单个FCM样本与样本集合的数据模型，读取CSV事件表和JSON清单（manifest），
     划分训练/验证/测试集并计算标准化统计量
"""

import copy
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd

from ..utils.config import Config
from ..utils.errors import DataError, MarkerError
from ..utils.logger import get_logger

logger = get_logger("dataset")

SPLITS = ("train", "val", "test")


@dataclass
class FcmSample:
    """
    单个流式细胞术样本
    用途：保存事件矩阵 (n, F)、标记物名称和可选的逐事件二值标签（1 = 原始细胞/blast）
    """
    events: np.ndarray
    markers: List[str]
    labels: Optional[np.ndarray] = None
    sample_id: str = "sample"
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.events = np.asarray(self.events, dtype=np.float32)
        self.markers = [str(m).strip() for m in self.markers]
        if self.events.ndim != 2:
            raise DataError(f"样本 {self.sample_id}: 事件矩阵必须是二维, 实际形状 {self.events.shape}")
        n, n_features = self.events.shape
        if n < 1 or n_features < 1:
            raise DataError(f"样本 {self.sample_id}: 需要 n >= 1 且 F >= 1, 实际 n={n}, F={n_features}")
        if len(self.markers) != n_features:
            raise DataError(f"样本 {self.sample_id}: 标记物数量 {len(self.markers)} 与特征列数 {n_features} 不一致")
        duplicated = sorted({m for m in self.markers if self.markers.count(m) > 1})
        if duplicated:
            raise MarkerError(f"样本 {self.sample_id}: 标记物名称重复: {', '.join(duplicated)}")
        if self.labels is not None:
            self.labels = (np.asarray(self.labels).reshape(-1) != 0).astype(np.int64)
            if self.labels.shape[0] != n:
                raise DataError(f"样本 {self.sample_id}: 标签长度 {self.labels.shape[0]} 与事件数 {n} 不一致")

    @property
    def n_events(self) -> int:
        return int(self.events.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.events.shape[1])

    def marker_index(self, marker: str) -> int:
        if marker not in self.markers:
            raise MarkerError(f"样本 {self.sample_id} 缺少标记物: {marker}")
        return self.markers.index(marker)


def load_csv_sample(source: Union[str, TextIO], label_column: Optional[str] = None,
                    sample_id: str = "csv") -> FcmSample:
    """
    读取CSV事件表
    参数：
        source: CSV文本或文本流（首行为标记物名称，其余为数值行）
        label_column: 作为标签的列名，读取后从特征中移除并二值化（非零 → 1）
        sample_id: 样本编号
    返回值：FcmSample
    """
    text = source if isinstance(source, str) else source.read()
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise DataError(f"样本 {sample_id}: CSV内容为空")
    header = [name.strip() for name in lines[0].split(",")]
    if len(lines) == 1:
        raise DataError(f"样本 {sample_id}: CSV只有表头, 没有事件行")

    # 行长度检查，行号从1开始计数数据行
    for row, line in enumerate(lines[1:], start=1):
        n_fields = len(line.split(","))
        if n_fields != len(header):
            raise DataError(f"样本 {sample_id}: 第 {row} 行数据字段数 {n_fields} 与表头列数 {len(header)} 不一致")

    frame = pd.read_csv(io.StringIO("\n".join(lines)), dtype=str, keep_default_na=False, skipinitialspace=True)
    frame.columns = header
    values = frame.apply(pd.to_numeric, errors="coerce")
    bad = values.isna().to_numpy()
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DataError(f"样本 {sample_id}: 第 {row + 1} 行数据的 '{header[col]}' 列不是数值: "
                        f"{frame.iat[row, col]!r}")

    labels = None
    if label_column is not None:
        if label_column not in header:
            raise MarkerError(f"样本 {sample_id}: 不存在标签列 {label_column}")
        labels = (values[label_column].to_numpy() != 0).astype(np.int64)
        values = values.drop(columns=[label_column])
    if values.shape[1] == 0:
        raise DataError(f"样本 {sample_id}: 除标签列外没有特征列")
    return FcmSample(events=values.to_numpy(dtype=np.float64).astype(np.float32),
                     markers=list(values.columns), labels=labels, sample_id=sample_id)


def read_csv_sample(path: Union[str, Path], label_column: Optional[str] = None) -> FcmSample:
    """读取CSV文件，样本编号取文件名（不含扩展名）"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"样本文件不存在: {path}")
    with open(path, "r", encoding="utf-8") as f:
        sample = load_csv_sample(f, label_column=label_column, sample_id=path.stem)
    sample.metadata["source"] = str(path)
    return sample


def read_csv_markers(path: Union[str, Path], label_column: Optional[str] = None) -> List[str]:
    """只读取CSV表头，返回特征标记物名称（不含标签列）"""
    path = Path(path)
    try:
        header = [str(name).strip() for name in pd.read_csv(path, nrows=0).columns]
    except pd.errors.EmptyDataError:
        raise DataError(f"样本 {path.stem}: CSV内容为空")
    if label_column is not None:
        if label_column not in header:
            raise MarkerError(f"样本 {path.stem}: 不存在标签列 {label_column}")
        header.remove(label_column)
    return header


def save_sample_csv(sample: FcmSample, path: Union[str, Path], label_column: str = "label") -> Path:
    """
    将样本保存为CSV（标签写在最后一列）
    参数：
        sample: 样本
        path: 输出路径
        label_column: 标签列名
    返回值：写入的文件路径
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(sample.events, columns=sample.markers)
    if sample.labels is not None:
        frame[label_column] = sample.labels
    frame.to_csv(path, index=False)
    return path


def split_counts(n: int, fractions: Sequence[float]) -> Tuple[int, int, int]:
    """
    按比例计算划分数量：验证集向下取整，测试集四舍五入（0.5进位），训练集取剩余
    例：8 → (4, 2, 2)；40 → (20, 10, 10)；519 → (260, 129, 130)
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-6:
        raise DataError(f"划分比例必须是三个非负数且和为1, 实际 {list(fractions)}")
    n_val = int(math.floor(n * fractions[1]))
    n_test = int(math.floor(n * fractions[2] + 0.5))
    n_train = n - n_val - n_test
    if n_train < 0:
        raise DataError(f"样本数 {n} 无法按比例 {list(fractions)} 划分")
    return n_train, n_val, n_test


def assign_splits(sample_ids: Sequence[str], fractions: Sequence[float], seed: int) -> Dict[str, str]:
    """
    用种子打乱样本后按比例划分
    返回值：样本编号到 train/val/test 的映射
    """
    # 划分数量按 split_counts 的取整规则（验证集向下取整、测试集0.5进位），不用比例式的随机划分工具
    n_train, n_val, _ = split_counts(len(sample_ids), fractions)
    order = np.random.default_rng(seed).permutation(len(sample_ids))
    split = {}
    for rank, idx in enumerate(order.tolist()):
        if rank < n_train:
            split[sample_ids[idx]] = "train"
        elif rank < n_train + n_val:
            split[sample_ids[idx]] = "val"
        else:
            split[sample_ids[idx]] = "test"
    return split


@dataclass
class StandardizationStats:
    """
    标准化统计量
    用途：按规范标记物顺序保存训练集事件的均值、标准差以及可选的arcsinh系数，随模型一起保存以保证评估与训练一致
    """
    markers: List[str]
    mean: np.ndarray
    std: np.ndarray
    cofactors: Optional[np.ndarray] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "markers": list(self.markers),
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "cofactors": None if self.cofactors is None else [float(v) for v in self.cofactors],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StandardizationStats":
        cofactors = data.get("cofactors")
        return cls(list(data["markers"]), np.asarray(data["mean"], dtype=np.float64),
                   np.asarray(data["std"], dtype=np.float64),
                   None if cofactors is None else np.asarray(cofactors, dtype=np.float64))

    def transform(self, events: np.ndarray) -> np.ndarray:
        x = np.asarray(events, dtype=np.float64)
        if self.cofactors is not None:
            x = np.arcsinh(x / self.cofactors)
        return ((x - self.mean) / self.std).astype(np.float32)


@dataclass
class SampleEntry:
    """清单中的一条样本记录；sample 非空时表示内存中的样本"""
    sample_id: str
    path: Optional[Path] = None
    label_column: Optional[str] = None
    sample: Optional[FcmSample] = None


class FcmDataset:
    """
    FCM样本集合
    用途：按需加载样本，保存规范标记物列表、样本划分和训练集标准化统计量；构造完成后不再修改
    """

    def __init__(self, entries: Sequence[SampleEntry], canonical_markers: Sequence[str],
                 split: Dict[str, str], cofactors: Optional[Dict[str, float]] = None,
                 stats: Optional[StandardizationStats] = None, name: str = "dataset"):
        """
        初始化数据集
        参数：
            entries: 样本记录列表
            canonical_markers: 模型输入特征使用的规范标记物顺序
            split: 样本编号到 train/val/test 的映射
            cofactors: 标记物到arcsinh系数的映射（可选）
            stats: 已有的标准化统计量；为None时在训练集上计算
            name: 数据集名称（报告中使用）
        """
        self.entries = list(entries)
        self.canonical_markers = [m.strip() for m in canonical_markers]
        self.split = dict(split)
        self.name = name
        self._cache: Dict[str, FcmSample] = {}

        if not self.canonical_markers:
            raise MarkerError("规范标记物列表为空")
        duplicated = sorted({m for m in self.canonical_markers if self.canonical_markers.count(m) > 1})
        if duplicated:
            raise MarkerError(f"规范标记物重复: {', '.join(duplicated)}")
        ids = [entry.sample_id for entry in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("清单中的样本编号重复")
        for sample_id in ids:
            if self.split.get(sample_id) not in SPLITS:
                raise DataError(f"样本 {sample_id} 的划分无效: {self.split.get(sample_id)!r}")
        unknown = sorted(set(self.split) - set(ids))
        if unknown:
            raise DataError(f"划分中包含未知样本: {', '.join(unknown[:5])}")

        self.cofactors = None
        if cofactors:
            missing = [m for m in cofactors if m not in self.canonical_markers]
            if missing:
                raise MarkerError(f"arcsinh系数对应的标记物不在规范列表中: {', '.join(missing)}")
            self.cofactors = np.asarray([float(cofactors.get(m, 1.0)) for m in self.canonical_markers])
            if (self.cofactors <= 0).any():
                raise DataError("arcsinh系数必须为正数")

        for entry in self.entries:
            self._check_entry_markers(entry)
        self.stats = stats if stats is not None else self._compute_stats()

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def sample_ids(self) -> List[str]:
        return [entry.sample_id for entry in self.entries]

    def ids(self, split: str) -> List[str]:
        if split not in SPLITS:
            raise DataError(f"未知的数据划分: {split}")
        return [entry.sample_id for entry in self.entries if self.split[entry.sample_id] == split]

    def split_sizes(self) -> Dict[str, int]:
        return {name: len(self.ids(name)) for name in SPLITS}

    def sample(self, sample_id: str) -> FcmSample:
        """按编号获取样本，文件样本在首次访问时加载并缓存"""
        if sample_id in self._cache:
            return self._cache[sample_id]
        entry = next((e for e in self.entries if e.sample_id == sample_id), None)
        if entry is None:
            raise DataError(f"数据集中不存在样本: {sample_id}")
        sample = entry.sample if entry.sample is not None else _load_entry(entry)
        self._check_markers(sample)
        self._cache[sample_id] = sample
        return sample

    def samples(self, split: str) -> List[FcmSample]:
        return [self.sample(sample_id) for sample_id in self.ids(split)]

    def _check_markers(self, sample: FcmSample) -> None:
        for marker in self.canonical_markers:
            if marker not in sample.markers:
                raise MarkerError(f"样本 {sample.sample_id} 缺少规范标记物: {marker}")

    def _check_entry_markers(self, entry: SampleEntry) -> None:
        # 构造时检查全部划分的样本；文件样本只读表头
        markers = entry.sample.markers if entry.sample is not None else _entry_markers(entry)
        for marker in self.canonical_markers:
            if marker not in markers:
                raise MarkerError(f"样本 {entry.sample_id} 缺少规范标记物: {marker}")

    def canonical_events(self, sample: FcmSample) -> np.ndarray:
        """按规范标记物顺序取出原始事件列"""
        self._check_markers(sample)
        columns = [sample.markers.index(m) for m in self.canonical_markers]
        return sample.events[:, columns]

    def _compute_stats(self) -> StandardizationStats:
        train_ids = self.ids("train")
        if not train_ids:
            raise DataError("训练集为空, 无法计算标准化统计量")
        total = np.zeros(len(self.canonical_markers))
        total_sq = np.zeros(len(self.canonical_markers))
        count = 0
        # 逐样本累加，避免拼接全部训练事件
        for sample_id in train_ids:
            x = self.canonical_events(self.sample(sample_id)).astype(np.float64)
            if self.cofactors is not None:
                x = np.arcsinh(x / self.cofactors)
            total += x.sum(axis=0)
            count += x.shape[0]
        mean = total / count
        for sample_id in train_ids:
            x = self.canonical_events(self.sample(sample_id)).astype(np.float64)
            if self.cofactors is not None:
                x = np.arcsinh(x / self.cofactors)
            total_sq += ((x - mean) ** 2).sum(axis=0)
        std = np.sqrt(total_sq / count)
        flat = std < 1e-12
        if flat.any():
            logger.warning("标记物在训练集上方差为0, 标准差按1处理: %s",
                           ", ".join(np.asarray(self.canonical_markers)[flat]))
            std = np.where(flat, 1.0, std)
        return StandardizationStats(list(self.canonical_markers), mean, std, self.cofactors)

    def prepare(self, sample: FcmSample) -> np.ndarray:
        """
        标准化样本
        参数：
            sample: 含全部规范标记物的样本
        返回值：(n, F) float32，按规范顺序先做arcsinh（若配置）再做z-score
        """
        return self.stats.transform(self.canonical_events(sample))

    def feature_indices(self, mask: Optional[Iterable[str]] = None) -> List[int]:
        """
        返回屏蔽部分标记物后的特征列索引
        参数：
            mask: 需要从节点特征中移除的标记物
        """
        masked = [m.strip() for m in (mask or [])]
        for marker in masked:
            if marker not in self.canonical_markers:
                raise MarkerError(f"被屏蔽的标记物不在规范列表中: {marker}")
        return [i for i, m in enumerate(self.canonical_markers) if m not in masked]

    def with_standardization(self, stats: StandardizationStats) -> "FcmDataset":
        """
        使用给定统计量（例如另一实验室数据集的训练统计量）构造新数据集视图
        """
        if list(stats.markers) != self.canonical_markers:
            raise MarkerError(f"标准化统计量的标记物 {stats.markers} 与数据集规范标记物 "
                              f"{self.canonical_markers} 不一致")
        other = copy.copy(self)
        other.stats = stats
        other._cache = self._cache
        return other

    @classmethod
    def from_samples(cls, samples: Sequence[FcmSample], canonical_markers: Optional[Sequence[str]] = None,
                     split: Optional[Dict[str, str]] = None, seed: int = 0,
                     fractions: Optional[Sequence[float]] = None, name: str = "dataset") -> "FcmDataset":
        """
        由内存中的样本构造数据集
        参数：
            samples: 样本列表
            canonical_markers: 规范标记物，默认取第一个样本的标记物
            split: 显式划分；为None时按种子与比例划分
            seed: 划分种子
            fractions: 划分比例，默认取 Config.DATASET_CONFIG
        """
        if not samples:
            raise DataError("样本列表为空")
        markers = list(canonical_markers) if canonical_markers is not None else list(samples[0].markers)
        entries = [SampleEntry(s.sample_id, sample=s) for s in samples]
        if split is None:
            fractions = fractions or Config.DATASET_CONFIG["split_fractions"]
            split = assign_splits([s.sample_id for s in samples], fractions, seed)
        return cls(entries, markers, split, name=name)

    def describe(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "samples": len(self),
            "split": self.split_sizes(),
            "canonical_markers": list(self.canonical_markers),
        }


def _entry_suffix(entry: SampleEntry) -> str:
    path = entry.path
    if path is None or not path.exists():
        raise DataError(f"样本 {entry.sample_id} 的文件不存在: {path}")
    suffix = path.suffix.lower()
    if suffix not in (".fcs", ".csv"):
        raise DataError(f"样本 {entry.sample_id}: 不支持的文件类型 {suffix}")
    return suffix


def _entry_markers(entry: SampleEntry) -> List[str]:
    from .fcs_parser import read_fcs_markers

    if _entry_suffix(entry) == ".fcs":
        return read_fcs_markers(entry.path, label_column=entry.label_column)
    return read_csv_markers(entry.path, label_column=entry.label_column)


def _load_entry(entry: SampleEntry) -> FcmSample:
    # 延迟导入：fcs_parser 依赖本模块中的 FcmSample
    from .fcs_parser import read_fcs

    if _entry_suffix(entry) == ".fcs":
        sample = read_fcs(entry.path, label_column=entry.label_column)
    else:
        sample = read_csv_sample(entry.path, label_column=entry.label_column)
    sample.sample_id = entry.sample_id
    return sample


def load_manifest(path: Union[str, Path]) -> Dict[str, Any]:
    """读取JSON清单文件并检查必需字段"""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise DataError(f"清单文件不存在: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"清单文件不是合法的JSON: {path} ({e})")
    for key in ("canonical_markers", "samples"):
        if key not in manifest:
            raise DataError(f"清单缺少字段 '{key}': {path}")
    manifest["_dir"] = str(path.parent)
    manifest.setdefault("name", path.parent.name or "dataset")
    return manifest


def build_dataset(manifest: Union[str, Path, Dict[str, Any]], seed: int = 0,
                  drop_markers: Iterable[str] = ()) -> FcmDataset:
    """
    根据清单构建数据集
    参数：
        manifest: 清单路径（文件或含 manifest.json 的目录）或已读取的清单字典
        seed: 未给出显式划分时的打乱种子
        drop_markers: 从规范标记物中移除的标记物（样本可以不含这些标记物）
    返回值：FcmDataset，标准化统计量只在训练集事件上计算
    """
    if not isinstance(manifest, dict):
        manifest = load_manifest(manifest)
    base = Path(manifest.get("_dir", "."))
    default_label = manifest.get("label_column")

    entries = []
    for item in manifest["samples"]:
        if "path" not in item:
            raise DataError(f"清单中的样本记录缺少 'path': {item}")
        path = Path(item["path"])
        if not path.is_absolute():
            path = base / path
        sample_id = str(item.get("id", path.stem))
        entries.append(SampleEntry(sample_id, path, item.get("label_column", default_label)))

    dropped = {m.strip() for m in drop_markers}
    canonical = [m for m in manifest["canonical_markers"] if m.strip() not in dropped]

    cofactors = manifest.get("arcsinh_cofactors")
    if isinstance(cofactors, list):
        if len(cofactors) != len(manifest["canonical_markers"]):
            raise DataError("arcsinh_cofactors 列表长度与规范标记物数量不一致")
        cofactors = dict(zip(manifest["canonical_markers"], cofactors))
    if cofactors:
        cofactors = {m: c for m, c in cofactors.items() if m.strip() not in dropped}

    ids = [entry.sample_id for entry in entries]
    if manifest.get("split"):
        split = {str(k): v for k, v in manifest["split"].items()}
        logger.info("使用清单中的显式划分")
    else:
        fractions = manifest.get("split_fractions", Config.DATASET_CONFIG["split_fractions"])
        split = assign_splits(ids, fractions, seed)
    return FcmDataset(entries, canonical, split, cofactors=cofactors, name=manifest.get("name", "dataset"))


def write_manifest(out_dir: Union[str, Path], sample_paths: Dict[str, str], canonical_markers: Sequence[str],
                   split: Optional[Dict[str, str]] = None, label_column: Optional[str] = "label",
                   extra: Optional[Dict[str, Any]] = None) -> Path:
    """
    写出JSON清单
    参数：
        out_dir: 输出目录（清单写为 manifest.json）
        sample_paths: 样本编号到相对路径的映射
        canonical_markers: 规范标记物
        split: 可选的显式划分
        label_column: 标签列名
        extra: 额外字段
    返回值：清单文件路径
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest: Dict[str, Any] = {
        "canonical_markers": list(canonical_markers),
        "samples": [{"id": sid, "path": p} for sid, p in sample_paths.items()],
        "label_column": label_column,
        "split_fractions": list(Config.DATASET_CONFIG["split_fractions"]),
    }
    if split:
        manifest["split"] = dict(split)
    manifest.update(extra or {})
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    return path
