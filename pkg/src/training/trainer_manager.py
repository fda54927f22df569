# -*- coding: utf-8 -*-
"""
实验管理器
用途：统一管理多种架构、多个随机种子的训练与评估流程：模型库对比（zoo）和标记物屏蔽实验
"""

import json
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

from ..architectures.model_zoo import ModelConfig, build_model
from ..scripts.dataset_loader import FcmDataset
from ..services.evaluator import MetricsReport, evaluate, format_results_table, summarize_runs
from ..utils.config import Config
from .trainer import TrainConfig, train


class ExperimentManager:
    """
    实验管理器类
    用途：对每个架构按多个种子训练、在测试集上评估，并汇总为多次运行的均值 ± 标准差
    """

    def __init__(self, dataset: FcmDataset, model_section: Optional[Dict[str, Any]] = None,
                 training: Optional[TrainConfig] = None, out_dir: Optional[Union[str, Path]] = None,
                 threshold: float = 0.5, progress_callback: Optional[Callable[[int, str], None]] = None):
        """
        初始化实验管理器
        参数：
            dataset: 数据集
            model_section: 模型配置分组（默认 Config.MODEL_CONFIG）
            training: 训练配置
            out_dir: 输出根目录；每次运行写入 <out_dir>/<架构>/seed_<种子>/
            threshold: 判定阈值
            progress_callback: 进度回调函数 (百分比, 消息)
        """
        self.dataset = dataset
        self.model_section = dict(model_section or Config.MODEL_CONFIG)
        self.training = training or TrainConfig()
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.threshold = threshold
        self.progress_callback = progress_callback

    def _update_progress(self, progress: int, message: str) -> None:
        if self.progress_callback:
            self.progress_callback(progress, message)

    def model_config(self, architecture: str, seed: int, feature_mask: Sequence[str] = ()) -> ModelConfig:
        section = dict(self.model_section, architecture=architecture, seed=seed)
        in_features = len(self.dataset.feature_indices(feature_mask))
        return ModelConfig.from_config(section, in_features, feature_mask)

    def run(self, architecture: str, seeds: Sequence[int], feature_mask: Sequence[str] = (),
            tag: str = "") -> List[MetricsReport]:
        """
        按多个种子训练并评估一个架构
        参数：
            architecture: 架构名称
            seeds: 随机种子列表（模型初始化和训练都使用该种子）
            feature_mask: 从节点特征中移除的标记物
            tag: 输出子目录前缀
        返回值：每个种子一份测试集 MetricsReport
        """
        reports = []
        for seed in seeds:
            print(f"\n{'=' * 20} {architecture} (seed={seed}) {'=' * 20}")
            model = build_model(self.model_config(architecture, seed, feature_mask))
            run_dir = None
            if self.out_dir is not None:
                run_dir = self.out_dir / (tag + architecture) / f"seed_{seed}"
            cfg = replace(self.training, seed=seed)
            report = train(model, self.dataset, cfg, out_dir=run_dir, threshold=self.threshold)
            metrics = evaluate(model, self.dataset, "test", self.threshold,
                               metadata={"best_epoch": report.best_epoch, "feature_mask": list(feature_mask)})
            if run_dir is not None:
                metrics.save(run_dir / "metrics.json")
            reports.append(metrics)
        return reports

    def zoo(self, architectures: Sequence[str], seeds: Sequence[int],
            feature_mask: Sequence[str] = ()) -> Dict[str, Dict[str, float]]:
        """
        训练并评估多个架构，返回各架构的多次运行汇总
        """
        summaries = {}
        for i, architecture in enumerate(architectures):
            self._update_progress(int(100 * i / len(architectures)), f"训练 {architecture}")
            summaries[architecture] = summarize_runs(self.run(architecture, seeds, feature_mask))
        self._update_progress(100, "全部完成")
        if self.out_dir is not None:
            self.write_results(summaries, "results")
        return summaries

    def masked_feature_eval(self, architectures: Sequence[str], masked: Sequence[str],
                            seeds: Sequence[int]) -> Dict[str, Dict[str, float]]:
        """
        标记物屏蔽实验：被屏蔽的标记物从节点特征中移除，但仍用于构建k-NN图
        参数：
            architectures: 架构列表
            masked: 被屏蔽的标记物
            seeds: 随机种子列表
        返回值：各架构的多次运行汇总
        """
        columns = self.dataset.feature_indices(masked)
        print(f"屏蔽标记物: {', '.join(masked) or '(无)'}; 节点特征 {len(columns)} 个")
        summaries = {}
        for architecture in architectures:
            reports = self.run(architecture, seeds, masked, tag="masked_" if masked else "")
            summaries[architecture] = summarize_runs(reports)
        if self.out_dir is not None:
            self.write_results(summaries, "mask_results", {"masked_markers": list(masked)})
        return summaries

    def write_results(self, summaries: Dict[str, Dict[str, float]], name: str,
                      extra: Optional[Dict[str, Any]] = None) -> Path:
        """写出 <name>.json 与 <name>_table.txt"""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        payload = {"summaries": {k: {m: round(v, 10) if isinstance(v, float) else v for m, v in s.items()}
                                 for k, s in summaries.items()}}
        payload.update(extra or {})
        with open(self.out_dir / f"{name}.json", "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True, ensure_ascii=False)
            f.write("\n")
        table_path = self.out_dir / f"{name}_table.txt"
        table_path.write_text(format_results_table(summaries), encoding="utf-8")
        return table_path
