# -*- coding: utf-8 -*-
"""
模型训练器
用途：事件子采样、随机抖动、标签平滑、AdamW + 余弦退火训练循环，
     每轮在验证集上按平均F1选择最佳模型并保存检查点和训练日志
"""

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from ..architectures.model_zoo import EventClassifier, count_parameters, forward_events, save_model
from ..scripts.dataset_loader import FcmDataset
from ..services.evaluator import sample_result
from ..utils.errors import ConfigError, DataError, NumericalError
from ..utils.logger import JsonlWriter, get_logger
from .optim import SCHEDULES, adamw_step, build_optimizer, cosine_lr

logger = get_logger("trainer")


@dataclass
class TrainConfig:
    """
    训练配置
    用途：批大小4、每样本5万事件、150轮、学习率1e-3到2e-4的余弦退火（周期10）、抖动0.01、标签平滑0.1
    """
    batch_size: int = 4
    events_per_sample: int = 50000
    epochs: int = 150
    lr: float = 1e-3
    lr_min: float = 2e-4
    cosine_t: int = 10
    schedule: str = "restart"
    jitter_scale: float = 0.01
    label_smoothing_eps: float = 0.1
    gat_weight_decay: float = 0.2
    resample_each_epoch: bool = True
    progress_bar: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"不支持的学习率调度方式: {self.schedule}")
        if self.batch_size < 1 or self.events_per_sample < 1 or self.epochs < 1:
            raise ConfigError("batch_size、events_per_sample、epochs 必须为正数")
        if not 0 <= self.label_smoothing_eps < 1:
            raise ConfigError(f"label_smoothing_eps 必须在 [0, 1) 内, 实际 {self.label_smoothing_eps}")

    @classmethod
    def from_config(cls, section: Dict[str, Any]) -> "TrainConfig":
        """由 Config 的 training 分组构造"""
        names = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in section.items() if k in names})

    def learning_rate(self, epoch: int) -> float:
        return cosine_lr(epoch, self.lr, self.lr_min, self.cosine_t, self.schedule)


@dataclass
class PreparedSample:
    """标准化后的训练样本"""
    sample_id: str
    events: np.ndarray
    labels: np.ndarray


@dataclass
class BatchItem:
    """一个批次中的单个样本：子采样、抖动后的事件和平滑后的目标"""
    sample_id: str
    indices: np.ndarray
    events: torch.Tensor
    targets: torch.Tensor


@dataclass
class TrainReport:
    """
    训练报告
    用途：逐轮训练损失、验证集平均F1、学习率，以及验证平均F1最高的轮次和对应检查点
    """
    architecture: str
    train_loss: List[float] = field(default_factory=list)
    val_mean_f1: List[float] = field(default_factory=list)
    lr: List[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_mean_f1: float = float("-inf")
    checkpoint: Optional[str] = None
    parameters: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True, ensure_ascii=False)
            f.write("\n")
        return path


def prepare_samples(dataset: FcmDataset, split: str) -> List[PreparedSample]:
    """标准化一个划分中的全部样本"""
    prepared = []
    for sample in dataset.samples(split):
        if sample.labels is None:
            raise DataError(f"样本 {sample.sample_id} 没有标签, 无法训练")
        prepared.append(PreparedSample(sample.sample_id, dataset.prepare(sample), sample.labels))
    return prepared


def smooth_targets(labels: np.ndarray, eps: float) -> np.ndarray:
    """二值标签平滑：{0, 1} → {eps/2, 1 − eps/2}"""
    return labels.astype(np.float32) * (1.0 - eps) + eps / 2.0


def make_batch(samples: Sequence[PreparedSample], cfg: TrainConfig, rng: np.random.Generator,
               fixed_indices: Optional[Dict[str, np.ndarray]] = None) -> List[BatchItem]:
    """
    构造一个训练批次
    参数：
        samples: 已标准化的样本
        cfg: 训练配置
        rng: 随机数生成器（子采样与抖动）
        fixed_indices: 不重新采样时沿用的事件索引
    返回值：BatchItem 列表；每个样本无放回采样 min(n, events_per_sample) 个事件，
           加 σ = jitter_scale 的高斯抖动，目标做标签平滑
    """
    batch = []
    for sample in samples:
        n = sample.events.shape[0]
        if n == 0:
            raise DataError(f"样本 {sample.sample_id} 没有事件")
        if fixed_indices is not None and sample.sample_id in fixed_indices:
            indices = fixed_indices[sample.sample_id]
        elif n <= cfg.events_per_sample:
            indices = np.arange(n)
        else:
            indices = np.sort(rng.choice(n, size=cfg.events_per_sample, replace=False))
        events = sample.events[indices]
        if cfg.jitter_scale > 0:
            events = events + rng.normal(0.0, cfg.jitter_scale, size=events.shape).astype(np.float32)
        targets = smooth_targets(sample.labels[indices], cfg.label_smoothing_eps)
        batch.append(BatchItem(sample.sample_id, indices, torch.as_tensor(events, dtype=torch.float32),
                               torch.as_tensor(targets, dtype=torch.float32)))
    return batch


def batch_loss(model: EventClassifier, batch: Sequence[BatchItem], node_columns: Optional[Sequence[int]],
               mode: str = "train") -> torch.Tensor:
    """逐事件二元交叉熵，先在样本内平均再在样本间平均"""
    losses = []
    for item in batch:
        logits = forward_events(model, item.events, node_columns, mode=mode)
        losses.append(F.binary_cross_entropy_with_logits(logits, item.targets))
    return torch.stack(losses).mean()


def validation_mean_f1(model: EventClassifier, samples: Sequence[PreparedSample],
                       node_columns: Optional[Sequence[int]], threshold: float = 0.5) -> float:
    """在验证样本的全部事件上计算平均F1（没有原始细胞的样本不参与平均）"""
    scores = []
    for sample in samples:
        logits = forward_events(model, sample.events, node_columns, mode="eval")
        result = sample_result(sample.sample_id, sample.labels, logits, threshold)
        if not result.excluded:
            scores.append(result.f1)
    return float(np.mean(scores)) if scores else 0.0


class ModelTrainer:
    """
    模型训练器类
    用途：管理一次训练的完整流程，训练历史保存在 training_history 中
    """

    def __init__(self, model: EventClassifier, dataset: FcmDataset, cfg: TrainConfig,
                 out_dir: Optional[Union[str, Path]] = None, threshold: float = 0.5):
        """
        参数：
            model: 待训练模型
            dataset: 数据集（需要非空的训练集和验证集）
            cfg: 训练配置
            out_dir: 输出目录；为None时不写文件
            threshold: 验证时的判定阈值
        """
        self.model = model
        self.dataset = dataset
        self.cfg = cfg
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.threshold = threshold
        self.node_columns = dataset.feature_indices(model.config.feature_mask)
        self.training_history = {"train_loss": [], "val_mean_f1": [], "lr": []}

    def train(self) -> TrainReport:
        cfg = self.cfg
        train_samples = prepare_samples(self.dataset, "train")
        val_samples = prepare_samples(self.dataset, "val")
        if not train_samples or not val_samples:
            raise DataError(f"训练集和验证集都不能为空, 实际 {self.dataset.split_sizes()}")

        report = TrainReport(self.model.config.architecture, parameters=count_parameters(self.model))
        print(f"开始训练 {report.architecture}: {report.parameters:,} 个参数, "
              f"{len(train_samples)} 个训练样本, {len(val_samples)} 个验证样本")

        torch.manual_seed(cfg.seed)
        rng = np.random.default_rng(cfg.seed)
        optimizer = build_optimizer(self.model, cfg.lr, cfg.gat_weight_decay)
        log = JsonlWriter(self.out_dir / "train_log.jsonl" if self.out_dir else None)
        fixed_indices = None if cfg.resample_each_epoch else self._draw_fixed_indices(train_samples, rng)
        best_state = None

        for epoch in range(cfg.epochs):
            lr = cfg.learning_rate(epoch)
            order = rng.permutation(len(train_samples))
            batches = [order[i:i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size)]
            epoch_losses = []

            progress = tqdm(batches, desc=f"Epoch {epoch + 1}/{cfg.epochs}", disable=not cfg.progress_bar)
            for batch_index, members in enumerate(progress):
                batch = make_batch([train_samples[i] for i in members], cfg, rng, fixed_indices)
                optimizer.zero_grad()
                loss = batch_loss(self.model, batch, self.node_columns)
                if not torch.isfinite(loss):
                    raise NumericalError(f"第 {epoch} 轮第 {batch_index} 批的损失不是有限数: {float(loss)}")
                loss.backward()
                adamw_step(optimizer, lr)
                epoch_losses.append(float(loss))
                progress.set_postfix({"loss": f"{float(loss):.4f}"})

            val_f1 = validation_mean_f1(self.model, val_samples, self.node_columns, self.threshold)
            train_loss = float(np.mean(epoch_losses))
            self.training_history["train_loss"].append(train_loss)
            self.training_history["val_mean_f1"].append(val_f1)
            self.training_history["lr"].append(lr)
            log.write({"epoch": epoch, "lr": lr, "train_loss": train_loss, "val_mean_f1": val_f1})
            logger.info("epoch %d: lr=%.6f train_loss=%.5f val_mean_f1=%.4f", epoch, lr, train_loss, val_f1)

            if val_f1 > report.best_val_mean_f1:
                report.best_epoch = epoch
                report.best_val_mean_f1 = val_f1
                best_state = copy.deepcopy(self.model.state_dict())

        self.model.load_state_dict(best_state)
        self.model.eval()
        report.train_loss = self.training_history["train_loss"]
        report.val_mean_f1 = self.training_history["val_mean_f1"]
        report.lr = self.training_history["lr"]
        if self.out_dir is not None:
            report.checkpoint = str(save_model(self.model, self.out_dir, self.dataset.stats.to_dict()))
            report.save(self.out_dir / "train_report.json")
        print(f"训练完成: 最佳轮次 {report.best_epoch}, 验证集平均F1 {report.best_val_mean_f1:.4f}")
        return report

    def _draw_fixed_indices(self, samples: Sequence[PreparedSample], rng: np.random.Generator):
        # 只采样一次时，后续各轮沿用同一批事件
        fixed = {}
        for sample in samples:
            n = sample.events.shape[0]
            if n <= self.cfg.events_per_sample:
                fixed[sample.sample_id] = np.arange(n)
            else:
                fixed[sample.sample_id] = np.sort(rng.choice(n, size=self.cfg.events_per_sample, replace=False))
        return fixed


def train(model: EventClassifier, dataset: FcmDataset, cfg: TrainConfig,
          out_dir: Optional[Union[str, Path]] = None, threshold: float = 0.5) -> TrainReport:
    """
    训练模型并恢复到验证集平均F1最高的轮次
    参数：
        model: 模型
        dataset: 数据集
        cfg: 训练配置
        out_dir: 输出目录（model.ckpt、model.json、train_report.json、train_log.jsonl）
        threshold: 判定阈值
    返回值：TrainReport
    """
    return ModelTrainer(model, dataset, cfg, out_dir, threshold).train()
