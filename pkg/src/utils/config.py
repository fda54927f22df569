# -*- coding: utf-8 -*-
"""
项目配置管理模块
用途：统一管理项目中的各种配置参数，包括模型参数、训练参数、合成数据参数、路径配置等
"""

import copy
import json
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from .errors import ConfigError


class Config:
    """
    项目配置类
    用途：集中管理项目的所有默认配置参数，并负责合并配置文件与命令行覆盖项
    """

    # 模型库中的全部架构名称
    ARCHITECTURES = [
        "mlp", "mlp-mean", "mlp-max", "mlp-pma",
        "pointnet", "pointnet-adapted",
        "st", "st-150i", "st-no-att", "reluformer", "st-fps",
        "gcn", "gat", "gin", "gat-3", "gin-3",
        "gat-asap", "gin-asap",
        "gat-st-fps", "gin-st-fps",
    ]

    # 模型配置
    MODEL_CONFIG = {
        "architecture": "gin-st-fps",
        "layers": 4,              # 每个模型的网络层数
        "hidden_dim": 32,         # 隐藏层维度
        "heads": 4,               # 多头注意力头数
        "k": 10,                  # k-NN图的邻居数
        "inducing_points": 16,    # ISAB可学习诱导点数量
        "fps_ratio": 0.0005,      # FPS采样比例
        "fps_min_count": 16,      # FPS最少采样点数
        "gat_dropout": 0.2,       # GAT注意力系数dropout
        "pointnet_event_dim": 128,    # PointNet单事件特征维度
        "pointnet_global_dim": 1024,  # PointNet全局特征维度
        "asap_targets": [100, 50],    # ASAP两次池化的目标节点数
        "seed": 0
    }

    # 训练配置
    TRAINING_CONFIG = {
        "batch_size": 4,             # 每批样本数
        "events_per_sample": 50000,  # 每个样本随机采样的事件数
        "epochs": 150,               # 训练轮数
        "lr": 1e-3,                  # 初始（最大）学习率
        "lr_min": 2e-4,              # 余弦退火最小学习率
        "cosine_t": 10,              # 余弦退火周期
        "schedule": "restart",       # restart: t mod T 周期重启; clamped: T之后保持最小值
        "jitter_scale": 0.01,        # 随机抖动标准差
        "label_smoothing_eps": 0.1,  # 标签平滑系数
        "gat_weight_decay": 0.2,     # GAT参数的权重衰减
        "resample_each_epoch": True, # 每轮重新采样事件
        "progress_bar": True,        # 是否显示tqdm进度条
        "seed": 0
    }

    # 合成数据配置
    SYNTH_CONFIG = {
        "n_events": 5000,
        "n_features": 10,
        "n_healthy_clusters": 5,
        "blast_fraction": 0.01,
        "population_shift_scale": 1.0,
        "cluster_spread": 6.0,
        "blast_offset_range": [2.0, 4.0],
        "n_discriminative": 3,      # 原始细胞强偏移的轴数
        "weak_offset": 1.0,
        "marker_prefix": "M",
        "seed": 0
    }

    # 数据集配置
    DATASET_CONFIG = {
        "split_fractions": [0.5, 0.25, 0.25],  # 训练/验证/测试比例
        "label_column": "label"
    }

    # 评估配置
    EVAL_CONFIG = {
        "threshold": 0.5,
        "split": "test"
    }

    # 日志配置
    LOGGING_CONFIG = {
        "level": "INFO",       # 日志级别
        "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",  # 日志格式
        "file_handler": True   # 是否写入文件
    }

    SECTIONS = ("model", "training", "synth", "dataset", "eval")

    @classmethod
    def defaults(cls) -> Dict[str, Dict[str, Any]]:
        """
        返回全部默认配置的深拷贝
        返回值：按分组组织的配置字典
        """
        return {
            "model": copy.deepcopy(cls.MODEL_CONFIG),
            "training": copy.deepcopy(cls.TRAINING_CONFIG),
            "synth": copy.deepcopy(cls.SYNTH_CONFIG),
            "dataset": copy.deepcopy(cls.DATASET_CONFIG),
            "eval": copy.deepcopy(cls.EVAL_CONFIG),
        }

    @classmethod
    def load_file(cls, path: Optional[Path]) -> Dict[str, Dict[str, Any]]:
        """
        读取JSON配置文件
        参数：
            path: 配置文件路径，None表示不使用配置文件
        返回值：按分组组织的配置字典（仅包含文件中出现的键）
        """
        if path is None:
            return {}
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"配置文件不存在: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                content = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"配置文件不是合法的JSON: {path} ({e})")
        if not isinstance(content, dict):
            raise ConfigError(f"配置文件顶层必须是对象: {path}")
        return content

    @classmethod
    def resolve(cls, path: Optional[Path] = None,
                overrides: Iterable[str] = (),
                flags: Optional[Dict[str, Dict[str, Any]]] = None) -> Dict[str, Dict[str, Any]]:
        """
        合并配置：默认值 < 配置文件 < --set 覆盖项 < 显式命令行参数
        参数：
            path: 配置文件路径
            overrides: "section.key=value" 形式的覆盖项
            flags: 命令行显式参数，按分组组织，值为None的项被忽略
        返回值：完整解析后的配置字典
        """
        resolved = cls.defaults()
        cls._merge(resolved, cls.load_file(path), source=str(path))

        for item in overrides:
            section, key, value = cls._parse_override(item)
            cls._merge(resolved, {section: {key: value}}, source=f"--set {item}")

        for section, values in (flags or {}).items():
            present = {k: v for k, v in values.items() if v is not None}
            cls._merge(resolved, {section: present}, source="命令行参数")
        return resolved

    @classmethod
    def _merge(cls, target: Dict[str, Dict[str, Any]], update: Dict[str, Any], source: str) -> None:
        for section, values in update.items():
            if section not in cls.SECTIONS:
                raise ConfigError(f"未知配置分组 '{section}' (来源: {source})")
            if not isinstance(values, dict):
                raise ConfigError(f"配置分组 '{section}' 必须是对象 (来源: {source})")
            for key, value in values.items():
                if key not in target[section]:
                    raise ConfigError(f"未知配置项 '{section}.{key}' (来源: {source})")
                target[section][key] = cls._coerce(f"{section}.{key}", target[section][key], value, source)

    @staticmethod
    def _coerce(name: str, default: Any, value: Any, source: str) -> Any:
        """按默认值的类型检查配置值；整数值的浮点数可以写给整数项，整数可以写给浮点项"""
        if default is None or value is None:
            return value
        expected = type(default)
        if expected is bool:
            ok = isinstance(value, bool)
        elif expected is int:
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif expected is float:
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            value = float(value) if ok else value
        elif expected in (list, tuple):
            ok = isinstance(value, (list, tuple))
            value = list(value) if ok else value
        else:
            ok = isinstance(value, expected)
        if not ok:
            raise ConfigError(f"配置项 '{name}' 需要 {expected.__name__} 类型的值, 实际 {value!r} (来源: {source})")
        return value

    @staticmethod
    def _parse_override(item: str):
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"覆盖项格式应为 section.key=value: {item}")
        name, raw = item.split("=", 1)
        section, key = name.split(".", 1)
        # 值按JSON解析，失败则按字符串处理
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        return section.strip(), key.strip(), value

    @staticmethod
    def write_resolved(config: Dict[str, Any], out_dir: Path) -> Path:
        """
        将完整解析后的配置写入输出目录
        参数：
            config: 解析后的配置
            out_dir: 输出目录
        返回值：写入的文件路径
        使用场景：每次命令运行都保存配置以便复现
        """
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "resolved_config.json"
        with open(path, "w", encoding="utf-8") as f:
            json.dump(config, f, indent=2, sort_keys=True, ensure_ascii=False)
            f.write("\n")
        return path
