# -*- coding: utf-8 -*-
"""
评估服务
用途：逐样本计算精确率、召回率、F1及MRD估计，跨样本汇总（均值、标准差、中位数），
     多次运行汇总和跨实验室（跨数据集）泛化评估
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
from sklearn.metrics import confusion_matrix
from tqdm import tqdm

from ..architectures.model_zoo import EventClassifier, forward_sample
from ..scripts.dataset_loader import FcmDataset, StandardizationStats
from ..utils.errors import DataError
from ..utils.logger import get_logger

logger = get_logger("evaluator")


def sample_metrics(labels: Sequence[int], predictions: Sequence[int]) -> Tuple[float, float, float]:
    """
    单个样本的精确率、召回率和F1
    参数：
        labels: n 个真实二值标签（1 = 原始细胞）
        predictions: n 个预测二值标签
    返回值：(p, r, F1)；tp+fp=0 时 p=0，tp+fn=0 时 r=0，p+r=0 时 F1=0
    """
    tp, fp, fn = confusion_counts(labels, predictions)
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return float(precision), float(recall), float(f1)


def confusion_counts(labels: Sequence[int], predictions: Sequence[int]) -> Tuple[int, int, int]:
    """返回 (tp, fp, fn)"""
    labels = np.asarray(labels).reshape(-1)
    predictions = np.asarray(predictions).reshape(-1)
    if labels.shape != predictions.shape:
        raise DataError(f"标签长度 {labels.shape[0]} 与预测长度 {predictions.shape[0]} 不一致")
    if labels.size == 0:
        return 0, 0, 0
    _, fp, fn, tp = confusion_matrix((labels != 0).astype(int), (predictions != 0).astype(int), labels=[0, 1]).ravel()
    return int(tp), int(fp), int(fn)


@dataclass
class SampleResult:
    """单个样本的评估结果，含MRD估计（真实与预测的原始细胞比例）"""
    sample_id: str
    n_events: int
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    true_fraction: float
    predicted_fraction: float
    excluded: bool = False


@dataclass
class MetricsReport:
    """
    评估报告
    用途：保存逐样本指标，并给出跨样本的均值、标准差（总体标准差）和中位数；
         没有真实原始细胞的样本不参与汇总
    """
    rows: List[SampleResult]
    dataset: str = "dataset"
    split: str = "test"
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def included(self) -> List[SampleResult]:
        return [row for row in self.rows if not row.excluded]

    def values(self, metric: str) -> np.ndarray:
        return np.asarray([getattr(row, metric) for row in self.included], dtype=np.float64)

    def aggregates(self) -> Dict[str, Dict[str, float]]:
        result = {}
        for metric in ("precision", "recall", "f1"):
            values = self.values(metric)
            if values.size == 0:
                result[metric] = {"mean": 0.0, "std": 0.0, "median": 0.0}
            else:
                result[metric] = {"mean": float(values.mean()), "std": float(values.std()),
                                  "median": float(np.median(values))}
        return result

    @property
    def mean_f1(self) -> float:
        return self.aggregates()["f1"]["mean"]

    @property
    def median_f1(self) -> float:
        return self.aggregates()["f1"]["median"]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dataset": self.dataset,
            "split": self.split,
            "metadata": self.metadata,
            "aggregates": _round(self.aggregates()),
            "excluded_samples": [row.sample_id for row in self.rows if row.excluded],
            "conventions": {"empty_prediction_precision": 0.0, "no_positive_samples": "excluded"},
            "samples": [_round(asdict(row)) for row in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    def to_frame(self) -> pd.DataFrame:
        """逐样本结果表"""
        return pd.DataFrame([asdict(row) for row in self.rows])


def _round(value):
    if isinstance(value, float):
        return round(value, 10)
    if isinstance(value, dict):
        return {k: _round(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_round(v) for v in value]
    return value


def sample_result(sample_id: str, labels: np.ndarray, logits: torch.Tensor, threshold: float = 0.5) -> SampleResult:
    """由logits计算单个样本的评估结果"""
    probabilities = torch.sigmoid(logits.detach().float()).cpu().numpy()
    predictions = (probabilities >= threshold).astype(np.int64)
    labels = np.asarray(labels).astype(np.int64)
    tp, fp, fn = confusion_counts(labels, predictions)
    precision, recall, f1 = sample_metrics(labels, predictions)
    n = int(labels.shape[0])
    return SampleResult(sample_id, n, tp, fp, fn, precision, recall, f1,
                        true_fraction=float(labels.sum()) / n, predicted_fraction=float(predictions.sum()) / n,
                        excluded=(tp + fn) == 0)


def evaluate(model: EventClassifier, dataset: FcmDataset, split: str = "test", threshold: float = 0.5,
             feature_mask: Optional[Sequence[str]] = None, metadata: Optional[Dict[str, Any]] = None,
             progress_bar: bool = False) -> MetricsReport:
    """
    在一个数据划分上评估模型（评估模式，使用全部事件）
    参数：
        model: 模型
        dataset: 数据集
        split: train、val、test 或 all
        threshold: 判定阈值
        feature_mask: 节点特征屏蔽列表，None 时使用模型配置
        metadata: 写入报告的运行信息
        progress_bar: 是否显示进度条
    返回值：MetricsReport
    """
    sample_ids = dataset.sample_ids if split == "all" else dataset.ids(split)
    if not sample_ids:
        raise DataError(f"数据集 {dataset.name} 的 {split} 划分为空")
    rows = []
    for sample_id in tqdm(sample_ids, desc=f"评估 {split}", disable=not progress_bar):
        sample = dataset.sample(sample_id)
        if sample.labels is None:
            raise DataError(f"样本 {sample_id} 没有标签, 无法评估")
        logits = forward_sample(model, sample, dataset, feature_mask=feature_mask, mode="eval")
        rows.append(sample_result(sample_id, sample.labels, logits, threshold))

    excluded = [row.sample_id for row in rows if row.excluded]
    if excluded:
        logger.info("以下样本没有原始细胞, 不参与汇总: %s", ", ".join(excluded))
    meta = {"architecture": model.config.architecture, "seed": model.config.seed, "threshold": threshold}
    meta.update(metadata or {})
    return MetricsReport(rows, dataset=dataset.name, split=split, metadata=meta)


def cross_lab_eval(model: EventClassifier, source_stats: StandardizationStats, datasets: Sequence[FcmDataset],
                   split: str = "all", threshold: float = 0.5) -> Dict[str, MetricsReport]:
    """
    跨实验室泛化评估：不重新训练，用源数据集的标准化统计量处理目标数据集
    参数：
        model: 在源数据集上训练好的模型
        source_stats: 源数据集训练集的标准化统计量
        datasets: 目标数据集列表
        split: 目标数据集上评估的划分
    返回值：数据集名称到 MetricsReport 的映射
    """
    reports = {}
    for dataset in datasets:
        target = dataset.with_standardization(source_stats)
        reports[dataset.name] = evaluate(model, target, split=split, threshold=threshold,
                                         metadata={"evaluation": "cross-lab"})
    return reports


def summarize_runs(reports: Sequence[MetricsReport]) -> Dict[str, float]:
    """
    汇总多次运行
    返回值：p、r 的均值，avg F1 与 med F1 在各次运行之间的均值和标准差
    """
    if not reports:
        raise DataError("没有可汇总的运行结果")
    aggregates = [report.aggregates() for report in reports]
    avg_f1 = np.asarray([a["f1"]["mean"] for a in aggregates])
    med_f1 = np.asarray([a["f1"]["median"] for a in aggregates])
    return {
        "runs": len(reports),
        "precision": float(np.mean([a["precision"]["mean"] for a in aggregates])),
        "recall": float(np.mean([a["recall"]["mean"] for a in aggregates])),
        "avg_f1": float(avg_f1.mean()),
        "avg_f1_std": float(avg_f1.std()),
        "med_f1": float(med_f1.mean()),
        "med_f1_std": float(med_f1.std()),
    }


def format_results_table(summaries: Dict[str, Dict[str, float]]) -> str:
    """
    把多个架构的汇总结果渲染为对齐的文本表（p, r, avg F1 ± std, med F1 ± std）
    """
    records = []
    for name, summary in summaries.items():
        records.append({
            "method": name,
            "p": f"{summary['precision']:.4f}",
            "r": f"{summary['recall']:.4f}",
            "avg F1": f"{summary['avg_f1']:.4f} ± {summary['avg_f1_std']:.4f}",
            "med F1": f"{summary['med_f1']:.4f} ± {summary['med_f1_std']:.4f}",
        })
    frame = pd.DataFrame(records, columns=["method", "p", "r", "avg F1", "med F1"])
    return frame.to_string(index=False) + "\n"
