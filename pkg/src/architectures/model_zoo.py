# -*- coding: utf-8 -*-
"""
模型库
用途：由声明式的 ModelConfig 组装全部20种架构（无上下文、全局上下文、局部上下文、局部+全局上下文），
     在整个样本上做逐事件分类，并负责模型的保存与加载
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core.checkpoint import load_parameters, restore_state, save_parameters
from ..utils.config import Config
from ..utils.errors import ConfigError, DataError, ShapeError
from ..utils.geometry import KnnGraph, knn_graph
from ..utils.logger import get_logger
from .asap import AsapStage, asap_unpool
from .attention import FpsSampled, GlobalAggregate, ISAB, Learned, ReluFormerBlock
from .gnn import GATLayer, gnn_layer
from .mlp import MLPStack
from .pointnet import PointNetSegmentation

logger = get_logger("models")

MODEL_FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    """
    模型配置
    用途：声明式描述一个架构及其超参数；in_features 为节点输入特征数（屏蔽标记物后）
    """
    architecture: str = "gin-st-fps"
    in_features: int = 10
    layers: int = 4
    hidden_dim: int = 32
    heads: int = 4
    k: int = 10
    inducing_points: int = 16
    fps_ratio: float = 0.0005
    fps_min_count: int = 16
    gat_dropout: float = 0.2
    pointnet_event_dim: int = 128
    pointnet_global_dim: int = 1024
    asap_targets: Tuple[int, int] = (100, 50)
    seed: int = 0
    feature_mask: List[str] = field(default_factory=list)

    INT_FIELDS = ("in_features", "layers", "hidden_dim", "heads", "k", "inducing_points", "fps_min_count",
                  "pointnet_event_dim", "pointnet_global_dim", "seed")
    FLOAT_FIELDS = ("fps_ratio", "gat_dropout")

    def __post_init__(self):
        for name in self.INT_FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ConfigError(f"模型配置 {name} 必须是整数, 实际 {value!r}")
            setattr(self, name, int(value))
        for name in self.FLOAT_FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float, np.floating)):
                raise ConfigError(f"模型配置 {name} 必须是数值, 实际 {value!r}")
            setattr(self, name, float(value))
        if not isinstance(self.architecture, str):
            raise ConfigError(f"模型配置 architecture 必须是字符串, 实际 {self.architecture!r}")
        if not isinstance(self.asap_targets, (list, tuple)) or not all(
                isinstance(t, (int, np.integer)) and not isinstance(t, bool) for t in self.asap_targets):
            raise ConfigError(f"模型配置 asap_targets 必须是整数列表, 实际 {self.asap_targets!r}")
        self.asap_targets = tuple(int(t) for t in self.asap_targets)
        self.feature_mask = list(self.feature_mask)
        if self.architecture not in Config.ARCHITECTURES:
            raise ConfigError(f"不支持的模型架构: {self.architecture} (可选: {', '.join(Config.ARCHITECTURES)})")
        if self.hidden_dim % self.heads != 0:
            raise ConfigError(f"hidden_dim={self.hidden_dim} 不能被 heads={self.heads} 整除")
        if self.layers < 1 or self.in_features < 1 or self.k < 1:
            raise ConfigError(f"layers、in_features、k 必须为正数: layers={self.layers}, "
                              f"in_features={self.in_features}, k={self.k}")
        if len(self.asap_targets) != 2:
            raise ConfigError(f"asap_targets 需要两个目标节点数, 实际 {self.asap_targets}")

    @property
    def effective_k(self) -> int:
        return 3 if self.architecture.endswith("-3") else self.k

    @property
    def effective_inducing_points(self) -> int:
        return 150 if self.architecture == "st-150i" else self.inducing_points

    @classmethod
    def from_config(cls, section: Dict[str, Any], in_features: int,
                    feature_mask: Sequence[str] = ()) -> "ModelConfig":
        """由 Config 的 model 分组构造"""
        names = set(cls.__dataclass_fields__)
        values = {k: v for k, v in section.items() if k in names}
        values["in_features"] = in_features
        values["feature_mask"] = list(feature_mask)
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["asap_targets"] = list(self.asap_targets)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        return cls(**data)


class EventClassifier(nn.Module):
    """
    逐事件分类模型基类
    用途：encode 产生 (n, feature_dim) 的预测头前特征，线性预测头输出每个事件一个logit
    """

    needs_graph = False

    def __init__(self, config: ModelConfig, feature_dim: int):
        super(EventClassifier, self).__init__()
        self.config = config
        self.feature_dim = feature_dim
        self.head = nn.Linear(feature_dim, 1)

    def encode(self, x: torch.Tensor, graph: Optional[KnnGraph]) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, x: torch.Tensor, graph: Optional[KnnGraph] = None, events: Optional[torch.Tensor] = None,
                return_features: bool = False):
        """
        前向传播
        参数：
            x: (n, in_features) 节点特征
            graph: 图架构使用的k-NN图
            events: 完整特征空间中的事件（ASAP反池化使用）
            return_features: 是否同时返回预测头前特征
        返回值：(n,) logits，或 (logits, features)
        """
        features = self.encode(x, graph)
        logits = self.head(features).squeeze(-1)
        return (logits, features) if return_features else logits


class MLPClassifier(EventClassifier):
    """MLP / MLP-mean / MLP-max / MLP-pma：全局聚合向量在预测头之前拼接到每个事件"""

    def __init__(self, config: ModelConfig, aggregate: Optional[str] = None):
        hidden = config.hidden_dim
        super(MLPClassifier, self).__init__(config, hidden * (2 if aggregate else 1))
        self.mlp = MLPStack([config.in_features] + [hidden] * config.layers)
        self.aggregate = GlobalAggregate(hidden, aggregate) if aggregate else None

    def encode(self, x, graph):
        h = self.mlp(x)
        if self.aggregate is None:
            return h
        context = self.aggregate(h)
        return torch.cat([h, context.expand(h.shape[0], -1)], dim=1)


class PointNetClassifier(EventClassifier):
    def __init__(self, config: ModelConfig, variant: str):
        pointnet = PointNetSegmentation(config.in_features, variant, config.pointnet_event_dim,
                                        config.pointnet_global_dim)
        super(PointNetClassifier, self).__init__(config, pointnet.out_dim)
        self.pointnet = pointnet

    def encode(self, x, graph):
        return self.pointnet(x)


class SetTransformerClassifier(EventClassifier):
    """ST / ST-150I / ST-No-Att / ST-FPS：输入嵌入后接若干ISAB"""

    def __init__(self, config: ModelConfig, fps: bool = False, sum_projections: bool = False):
        super(SetTransformerClassifier, self).__init__(config, config.hidden_dim)
        self.embed = nn.Linear(config.in_features, config.hidden_dim)
        self.blocks = nn.ModuleList([
            ISAB(config.hidden_dim, config.heads, _inducing_source(config, fps), sum_projections,
                 seed=config.seed + i)
            for i in range(config.layers)
        ])

    def encode(self, x, graph):
        h = self.embed(x)
        for block in self.blocks:
            h = block(h)
        return h


class ReluFormerClassifier(EventClassifier):
    def __init__(self, config: ModelConfig):
        super(ReluFormerClassifier, self).__init__(config, config.hidden_dim)
        self.embed = nn.Linear(config.in_features, config.hidden_dim)
        self.blocks = nn.ModuleList([ReluFormerBlock(config.hidden_dim, config.heads)
                                     for _ in range(config.layers)])

    def encode(self, x, graph):
        h = self.embed(x)
        for block in self.blocks:
            h = block(h)
        return h


class GNNClassifier(EventClassifier):
    """GCN / GAT / GIN（k=10）及 GAT-3 / GIN-3（k=3）"""

    needs_graph = True

    def __init__(self, config: ModelConfig, kind: str):
        super(GNNClassifier, self).__init__(config, config.hidden_dim)
        dims = [config.in_features] + [config.hidden_dim] * config.layers
        self.convs = nn.ModuleList([gnn_layer(kind, dims[i], dims[i + 1], config.gat_dropout)
                                    for i in range(config.layers)])

    def encode(self, x, graph):
        h = x
        for conv in self.convs:
            h = F.gelu(conv(h, graph))
        return h


class GnnSetTransformerClassifier(EventClassifier):
    """
    GAT-ST-FPS / GIN-ST-FPS
    用途：一个图层提取局部特征并与输入嵌入拼接，线性投影回隐藏维度后接三个FPS-ISAB
    """

    needs_graph = True

    def __init__(self, config: ModelConfig, kind: str):
        super(GnnSetTransformerClassifier, self).__init__(config, config.hidden_dim)
        hidden = config.hidden_dim
        self.embed = nn.Linear(config.in_features, hidden)
        self.local = gnn_layer(kind, hidden, hidden, config.gat_dropout)
        self.project = nn.Linear(2 * hidden, hidden)
        self.blocks = nn.ModuleList([
            ISAB(hidden, config.heads, _inducing_source(config, True), seed=config.seed + i)
            for i in range(max(1, config.layers - 1))
        ])

    def encode(self, x, graph):
        x0 = self.embed(x)
        local = F.gelu(self.local(x0, graph))
        h = self.project(torch.cat([local, x0], dim=1))
        for block in self.blocks:
            h = block(h)
        return h


class AsapClassifier(EventClassifier):
    """
    GAT-ASAP / GIN-ASAP
    用途：2个图层 → 池化到100个节点 → 2个图层 → 池化到50个节点 → 预测头，再反池化回每个事件
    """

    needs_graph = True

    def __init__(self, config: ModelConfig, kind: str):
        super(AsapClassifier, self).__init__(config, config.hidden_dim)
        hidden = config.hidden_dim
        self.stages = nn.ModuleList([
            AsapStage([gnn_layer(kind, config.in_features, hidden, config.gat_dropout),
                       gnn_layer(kind, hidden, hidden, config.gat_dropout)], hidden),
            AsapStage([gnn_layer(kind, hidden, hidden, config.gat_dropout),
                       gnn_layer(kind, hidden, hidden, config.gat_dropout)], hidden),
        ])

    def targets_for(self, n: int) -> List[int]:
        """目标节点数截断到 n−1，且第二次池化小于第一次"""
        first = min(self.config.asap_targets[0], n - 1)
        second = min(self.config.asap_targets[1], first - 1)
        targets = [first, second]
        if targets != list(self.config.asap_targets):
            logger.debug("ASAP目标节点数截断为 %s (n=%d)", targets, n)
        return targets

    def encode_pooled(self, x: torch.Tensor, graph: KnnGraph) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        assignments = []
        h = x
        for stage, target in zip(self.stages, self.targets_for(x.shape[0])):
            h = stage.convolve(h, graph)
            if target < 1:
                continue
            h, graph, assignment = stage.pool(h, graph, target)
            assignments.append(assignment)
        return h, assignments

    def forward(self, x, graph=None, events=None, return_features=False):
        pooled, assignments = self.encode_pooled(x, graph)
        events = x if events is None else events
        logits = asap_unpool(self.head(pooled), assignments, events).squeeze(-1)
        if not return_features:
            return logits
        return logits, asap_unpool(pooled, assignments, events)


def _inducing_source(config: ModelConfig, fps: bool):
    if fps:
        return FpsSampled(config.fps_ratio, config.fps_min_count)
    return Learned(config.effective_inducing_points)


RECIPES = {
    "mlp": lambda c: MLPClassifier(c),
    "mlp-mean": lambda c: MLPClassifier(c, "mean"),
    "mlp-max": lambda c: MLPClassifier(c, "max"),
    "mlp-pma": lambda c: MLPClassifier(c, "pma"),
    "pointnet": lambda c: PointNetClassifier(c, "standard"),
    "pointnet-adapted": lambda c: PointNetClassifier(c, "adapted"),
    "st": lambda c: SetTransformerClassifier(c),
    "st-150i": lambda c: SetTransformerClassifier(c),
    "st-no-att": lambda c: SetTransformerClassifier(c, sum_projections=True),
    "reluformer": lambda c: ReluFormerClassifier(c),
    "st-fps": lambda c: SetTransformerClassifier(c, fps=True),
    "gcn": lambda c: GNNClassifier(c, "gcn"),
    "gat": lambda c: GNNClassifier(c, "gat"),
    "gin": lambda c: GNNClassifier(c, "gin"),
    "gat-3": lambda c: GNNClassifier(c, "gat"),
    "gin-3": lambda c: GNNClassifier(c, "gin"),
    "gat-asap": lambda c: AsapClassifier(c, "gat"),
    "gin-asap": lambda c: AsapClassifier(c, "gin"),
    "gat-st-fps": lambda c: GnnSetTransformerClassifier(c, "gat"),
    "gin-st-fps": lambda c: GnnSetTransformerClassifier(c, "gin"),
}


def _init_parameters(model: nn.Module) -> None:
    # 线性层权重 U(±sqrt(1/fan_in))，偏置为0
    for module in model.modules():
        if isinstance(module, nn.Linear):
            bound = math.sqrt(1.0 / module.in_features)
            nn.init.uniform_(module.weight, -bound, bound)
            if module.bias is not None:
                nn.init.zeros_(module.bias)


def build_model(config: ModelConfig) -> EventClassifier:
    """
    根据配置组装模型
    参数：
        config: 模型配置
    返回值：EventClassifier；相同配置和种子得到逐位相同的初始参数
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        model = RECIPES[config.architecture](config)
        _init_parameters(model)
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def gat_parameters(model: nn.Module) -> List[nn.Parameter]:
    """返回属于GAT层的全部参数（单独设置权重衰减）"""
    params = []
    for module in model.modules():
        if isinstance(module, GATLayer):
            params.extend(module.parameters())
    return params


def build_graph(events: torch.Tensor, k: int) -> KnnGraph:
    """
    在完整特征空间上构建k-NN图；小样本时 k 缩小为 n−1，单个事件时为空图
    """
    n = events.shape[0]
    if n == 1:
        return KnnGraph.empty(1)
    if n <= k:
        logger.debug("样本事件数 %d 不大于 k=%d, k 缩小为 %d", n, k, n - 1)
        k = n - 1
    return knn_graph(events, k)


def forward_events(model: EventClassifier, events: Union[np.ndarray, torch.Tensor],
                   node_columns: Optional[Sequence[int]] = None, mode: str = "eval",
                   return_features: bool = False):
    """
    在已标准化的事件矩阵上运行模型
    参数：
        model: 模型
        events: (n, F) 规范标记物顺序的标准化事件（图在全部F个特征上构建）
        node_columns: 作为节点特征的列；None 表示全部列
        mode: train 或 eval
        return_features: 是否同时返回预测头前特征
    返回值：(n,) logits，或 (logits, features)
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"不支持的运行模式: {mode}")
    full = torch.as_tensor(events, dtype=torch.float32)
    if full.dim() != 2 or full.shape[0] < 1:
        raise DataError(f"事件矩阵必须是非空二维矩阵, 实际形状 {tuple(full.shape)}")
    x = full if node_columns is None else full[:, list(node_columns)]
    if x.shape[1] != model.config.in_features:
        raise ShapeError(f"节点特征数 {x.shape[1]} 与模型输入维度 {model.config.in_features} 不一致")

    graph = build_graph(full, model.config.effective_k) if model.needs_graph else None
    model.train(mode == "train")
    if mode == "train":
        return model(x, graph, events=full, return_features=return_features)
    with torch.no_grad():
        return model(x, graph, events=full, return_features=return_features)


def forward_sample(model: EventClassifier, sample, dataset, feature_mask: Optional[Sequence[str]] = None,
                   mode: str = "eval", return_features: bool = False):
    """
    对单个样本做逐事件分类
    参数：
        model: 模型
        sample: FcmSample
        dataset: 提供标准化统计量和规范标记物的 FcmDataset
        feature_mask: 从节点特征中移除的标记物；None 时使用模型配置中的屏蔽列表。图仍使用全部标记物
        mode: train 或 eval
        return_features: 是否同时返回预测头前特征
    返回值：(n,) logits；sigmoid(logit) >= 0.5 表示预测为原始细胞
    """
    mask = model.config.feature_mask if feature_mask is None else list(feature_mask)
    columns = dataset.feature_indices(mask)
    return forward_events(model, dataset.prepare(sample), columns, mode, return_features)


def save_model(model: EventClassifier, out_dir: Union[str, Path], standardization: Optional[Dict] = None,
               name: str = "model") -> Path:
    """
    保存模型：参数容器 <name>.ckpt 与配置 <name>.json（含标准化统计量）
    返回值：参数文件路径
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = save_parameters(model.state_dict(), out_dir / f"{name}.ckpt")
    meta = {
        "format_version": MODEL_FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "standardization": standardization,
    }
    with open(out_dir / f"{name}.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    return ckpt_path


def load_model(path: Union[str, Path]) -> Tuple[EventClassifier, Optional[Dict]]:
    """
    加载模型
    参数：
        path: 参数文件（.ckpt）或包含 model.ckpt 的目录
    返回值：(模型, 标准化统计量字典或None)
    """
    path = Path(path)
    if path.is_dir():
        path = path / "model.ckpt"
    meta_path = path.with_suffix(".json")
    if not meta_path.exists():
        raise DataError(f"模型配置文件不存在: {meta_path}")
    with open(meta_path, "r", encoding="utf-8") as f:
        meta = json.load(f)
    if meta.get("format_version") != MODEL_FORMAT_VERSION:
        raise DataError(f"不支持的模型文件版本: {meta.get('format_version')}")
    model = build_model(ModelConfig.from_dict(meta["model_config"]))
    restore_state(model, load_parameters(path))
    model.eval()
    return model, meta.get("standardization")
