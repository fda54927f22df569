# -*- coding: utf-8 -*-
"""
命令行工具
用途：串联数据导入、合成数据生成、训练、评估、跨实验室评估、标记物屏蔽实验、模型库对比、
     PCA特征导出和梯度检查
使用方法：python run_cli.py <命令> [参数]，或 python -m src.scripts.cli <命令> [参数]
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from ..utils.config import Config
from ..utils.errors import DataError, FcmError, NumericalError, UsageError
from ..utils.logger import get_logger, setup_logging

logger = get_logger("cli")


class CliParser(argparse.ArgumentParser):
    """参数错误时抛出 UsageError，由 run() 统一转换为退出码"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: 参数错误: {message}")


def _csv_list(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def _int_list(value: str) -> List[int]:
    try:
        return [int(item) for item in _csv_list(value)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"需要逗号分隔的整数列表: {value}")


def build_parser() -> CliParser:
    """
    构建命令行解析器
    返回值：包含全部子命令的解析器
    """
    parser = CliParser(prog="fcm", description="流式细胞术MRD事件级分类工具")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON配置文件")
    common.add_argument("--out", type=Path, default=None, help="输出目录（全部输出写在该目录下）")
    common.add_argument("--seed", type=int, default=None, help="随机种子")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="覆盖配置项，可重复使用")

    sub = parser.add_subparsers(dest="command", metavar="<命令>")
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="生成合成数据集（CSV样本 + 清单）")
    p.add_argument("--samples", type=int, default=40, help="样本数（默认: 40）")
    p.add_argument("--events", type=int, default=None, help="每个样本的事件数")
    p.add_argument("--features", type=int, default=None, help="标记物数量")
    p.add_argument("--blast-fraction", type=float, default=None, help="原始细胞比例")
    p.add_argument("--shift-scale", type=float, default=None, help="样本间群体漂移幅度")

    p = sub.add_parser("ingest", parents=[common], help="检查并汇总一个数据集清单")
    p.add_argument("--data", required=True, help="清单文件或包含 manifest.json 的目录")

    p = sub.add_parser("train", parents=[common], help="训练单个模型")
    p.add_argument("--data", required=True, help="数据集清单")
    p.add_argument("--arch", default=None, choices=Config.ARCHITECTURES, help="模型架构")
    p.add_argument("--epochs", type=int, default=None, help="训练轮数")
    p.add_argument("--mask", type=_csv_list, default=[], help="从节点特征中屏蔽的标记物（逗号分隔）")

    p = sub.add_parser("eval", parents=[common], help="在数据集的一个划分上评估模型")
    p.add_argument("--data", required=True, help="数据集清单")
    p.add_argument("--checkpoint", required=True, help="模型文件（.ckpt）或训练输出目录")
    p.add_argument("--split", default=None, choices=["train", "val", "test", "all"], help="评估划分")
    p.add_argument("--threshold", type=float, default=None, help="判定阈值")

    p = sub.add_parser("cross-eval", parents=[common], help="跨实验室评估：不重新训练，直接评估其他数据集")
    p.add_argument("--data", required=True, nargs="+", help="一个或多个目标数据集清单")
    p.add_argument("--checkpoint", required=True, help="在源数据集上训练的模型")
    p.add_argument("--split", default="all", choices=["train", "val", "test", "all"], help="评估划分（默认: all）")

    p = sub.add_parser("mask-eval", parents=[common], help="标记物屏蔽实验")
    p.add_argument("--data", required=True, help="数据集清单")
    p.add_argument("--archs", type=_csv_list, default=["gin-st-fps", "st"], help="架构列表（逗号分隔）")
    p.add_argument("--seeds", type=_int_list, default=None, help="种子列表（逗号分隔）")
    p.add_argument("--epochs", type=int, default=None, help="训练轮数")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--mask", type=_csv_list, default=None, help="屏蔽的标记物（逗号分隔）")
    group.add_argument("--mask-top", type=int, default=3, help="屏蔽区分度最高的若干标记物（默认: 3）")

    p = sub.add_parser("zoo", parents=[common], help="训练并评估多个架构，输出汇总表")
    p.add_argument("--data", required=True, help="数据集清单")
    p.add_argument("--archs", type=_csv_list, default=None, help="架构列表（默认: 全部）")
    p.add_argument("--seeds", type=_int_list, default=None, help="种子列表（逗号分隔）")
    p.add_argument("--epochs", type=int, default=None, help="训练轮数")

    p = sub.add_parser("pca-export", parents=[common], help="导出预测头前特征的PCA投影")
    p.add_argument("--data", required=True, help="数据集清单")
    p.add_argument("--checkpoint", required=True, help="模型文件或训练输出目录")
    p.add_argument("--sample", default=None, help="样本编号（默认: 测试集第一个样本）")
    p.add_argument("--no-plot", action="store_true", help="不绘制散点图")

    p = sub.add_parser("gradcheck", parents=[common], help="运行梯度检查套件")
    p.add_argument("--cases", type=_csv_list, default=None, help="只运行指定用例（逗号分隔）")
    p.add_argument("--instances", type=int, default=20, help="每个用例的随机实例数（默认: 20）")
    p.add_argument("--tolerance", type=float, default=1e-3, help="最大相对误差（默认: 1e-3）")
    return parser


def _flags(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    # 显式命令行参数映射到配置分组
    flags: Dict[str, Dict[str, Any]] = {"model": {}, "training": {}, "synth": {}, "eval": {}}
    if args.seed is not None:
        flags["model"]["seed"] = args.seed
        flags["training"]["seed"] = args.seed
        flags["synth"]["seed"] = args.seed
    if getattr(args, "arch", None):
        flags["model"]["architecture"] = args.arch
    flags["training"]["epochs"] = getattr(args, "epochs", None)
    flags["synth"]["n_events"] = getattr(args, "events", None)
    flags["synth"]["n_features"] = getattr(args, "features", None)
    flags["synth"]["blast_fraction"] = getattr(args, "blast_fraction", None)
    flags["synth"]["population_shift_scale"] = getattr(args, "shift_scale", None)
    flags["eval"]["threshold"] = getattr(args, "threshold", None)
    if args.command == "eval":
        flags["eval"]["split"] = args.split
    return flags


def _require_out(args: argparse.Namespace) -> Path:
    if args.out is None:
        raise UsageError(f"命令 {args.command} 需要 --out 输出目录")
    return args.out


def _seeds(args: argparse.Namespace, config: Dict[str, Dict[str, Any]]) -> List[int]:
    if args.seeds:
        return list(args.seeds)
    base = config["training"]["seed"]
    return [base, base + 1, base + 2]


def _load_dataset(path: str, config: Dict[str, Dict[str, Any]]):
    from .dataset_loader import build_dataset
    dataset = build_dataset(path, seed=config["training"]["seed"])
    print(f"数据集 {dataset.name}: {len(dataset)} 个样本, 划分 {dataset.split_sizes()}, "
          f"{len(dataset.canonical_markers)} 个标记物")
    return dataset


def _load_checkpoint(path: str, dataset):
    """读取模型；给出数据集时同时返回使用检查点标准化统计量的数据集视图"""
    from ..architectures.model_zoo import load_model
    from .dataset_loader import StandardizationStats
    model, stats = load_model(path)
    print(f"已加载模型 {model.config.architecture} (seed={model.config.seed})")
    if stats is not None:
        dataset = dataset.with_standardization(StandardizationStats.from_dict(stats))
    return model, dataset


def _write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    return path


def cmd_synth(args, config) -> int:
    from .synthetic import SynthConfig, generate_dataset, write_synthetic_dataset
    out = _require_out(args)
    synth = SynthConfig.from_config(config["synth"])
    dataset = generate_dataset(synth, args.samples, seed=synth.seed,
                               progress_bar=config["training"]["progress_bar"])
    manifest = write_synthetic_dataset(dataset, out, synth)
    print(f"合成数据集已写入: {manifest}")
    return 0


def cmd_ingest(args, config) -> int:
    import numpy as np
    out = _require_out(args)
    dataset = _load_dataset(args.data, config)
    rows = []
    for sample_id in dataset.sample_ids:
        sample = dataset.sample(sample_id)
        blasts = None if sample.labels is None else float(np.mean(sample.labels))
        rows.append({"id": sample_id, "split": dataset.split[sample_id], "events": sample.n_events,
                     "markers": sample.n_features, "blast_fraction": blasts})
    summary = dataset.describe()
    summary["samples_detail"] = rows
    summary["standardization"] = dataset.stats.to_dict()
    path = _write_json(out / "dataset_summary.json", summary)
    print(f"数据集汇总已写入: {path}")
    return 0


def cmd_train(args, config) -> int:
    from ..architectures.model_zoo import ModelConfig, build_model, count_parameters
    from ..training.trainer import TrainConfig, train
    out = _require_out(args)
    dataset = _load_dataset(args.data, config)
    mask = list(args.mask)
    model_config = ModelConfig.from_config(config["model"], len(dataset.feature_indices(mask)), mask)
    model = build_model(model_config)
    print(f"模型 {model_config.architecture}: {count_parameters(model):,} 个参数")
    report = train(model, dataset, TrainConfig.from_config(config["training"]), out_dir=out,
                   threshold=config["eval"]["threshold"])
    print(f"检查点: {report.checkpoint}")
    return 0


def cmd_eval(args, config) -> int:
    from ..services.evaluator import evaluate
    out = _require_out(args)
    dataset = _load_dataset(args.data, config)
    model, dataset = _load_checkpoint(args.checkpoint, dataset)
    report = evaluate(model, dataset, config["eval"]["split"], config["eval"]["threshold"],
                      progress_bar=config["training"]["progress_bar"])
    report.save(out / "metrics.json")
    report.to_frame().to_csv(out / "per_sample.csv", index=False)
    _print_aggregates(report)
    return 0


def cmd_cross_eval(args, config) -> int:
    from ..architectures.model_zoo import load_model
    from ..services.evaluator import cross_lab_eval
    from .dataset_loader import StandardizationStats, build_dataset
    out = _require_out(args)
    model, stats = load_model(args.checkpoint)
    if stats is None:
        raise DataError(f"模型文件中没有标准化统计量, 无法做跨实验室评估: {args.checkpoint}")
    datasets = [build_dataset(path, seed=config["training"]["seed"]) for path in args.data]
    reports = cross_lab_eval(model, StandardizationStats.from_dict(stats), datasets,
                             split=args.split, threshold=config["eval"]["threshold"])
    for name, report in reports.items():
        report.save(out / f"cross_{name}.json")
        print(f"\n{name}:")
        _print_aggregates(report)
    return 0


def _manager(args, config, dataset):
    from ..training.trainer import TrainConfig
    from ..training.trainer_manager import ExperimentManager
    return ExperimentManager(dataset, config["model"], TrainConfig.from_config(config["training"]),
                             out_dir=_require_out(args), threshold=config["eval"]["threshold"],
                             progress_callback=lambda p, m: logger.info("[%3d%%] %s", p, m))


def cmd_mask_eval(args, config) -> int:
    from .synthetic import most_discriminative_markers
    dataset = _load_dataset(args.data, config)
    masked = args.mask if args.mask is not None else most_discriminative_markers(dataset, args.mask_top)
    manager = _manager(args, config, dataset)
    baseline = manager.zoo(args.archs, _seeds(args, config))
    summaries = manager.masked_feature_eval(args.archs, masked, _seeds(args, config))
    print("\n未屏蔽:")
    print(_table(baseline), end="")
    print(f"\n屏蔽 {', '.join(masked)}:")
    print(_table(summaries), end="")
    return 0


def cmd_zoo(args, config) -> int:
    dataset = _load_dataset(args.data, config)
    architectures = args.archs or list(Config.ARCHITECTURES)
    unknown = [a for a in architectures if a not in Config.ARCHITECTURES]
    if unknown:
        raise UsageError(f"不支持的模型架构: {', '.join(unknown)}")
    summaries = _manager(args, config, dataset).zoo(architectures, _seeds(args, config))
    print()
    print(_table(summaries), end="")
    return 0


def cmd_pca_export(args, config) -> int:
    from ..services.feature_export import pca_features_export
    out = _require_out(args)
    dataset = _load_dataset(args.data, config)
    model, dataset = _load_checkpoint(args.checkpoint, dataset)
    if args.sample is not None:
        sample_id = args.sample
    else:
        candidates = dataset.ids("test") or dataset.sample_ids
        sample_id = candidates[0]
    frame = pca_features_export(model, dataset, dataset.sample(sample_id), out, plot=not args.no_plot)
    print(f"已导出 {len(frame)} 个事件的PCA投影: {out / f'pca_{sample_id}.csv'}")
    return 0


def cmd_gradcheck(args, config) -> int:
    from ..core.grad_cases import build_default_suite, run_gradcheck_suite
    seed = args.seed if args.seed is not None else 0
    suite = build_default_suite(tolerance=args.tolerance, instances=args.instances, seed=seed)
    try:
        results = run_gradcheck_suite(suite, args.cases)
    except ValueError as e:
        raise UsageError(str(e))
    if args.out is not None:
        _write_json(args.out / "gradcheck.json", {
            "tolerance": args.tolerance,
            "instances": args.instances,
            "results": [{"name": r.name, "max_error": r.max_error, "passed": r.passed, "message": r.message}
                        for r in results],
        })
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise NumericalError(f"梯度检查未通过: {', '.join(failed)}")
    print(f"全部 {len(results)} 个梯度检查用例通过")
    return 0


def _table(summaries) -> str:
    from ..services.evaluator import format_results_table
    return format_results_table(summaries)


def _print_aggregates(report) -> None:
    for metric, values in report.aggregates().items():
        print(f"  {metric:<9} mean={values['mean']:.4f} std={values['std']:.4f} median={values['median']:.4f}")


HANDLERS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "eval": cmd_eval,
    "cross-eval": cmd_cross_eval,
    "mask-eval": cmd_mask_eval,
    "zoo": cmd_zoo,
    "pca-export": cmd_pca_export,
    "gradcheck": cmd_gradcheck,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    命令行入口
    参数：
        argv: 参数列表（不含程序名）
    返回值：退出码；0 成功，1 用法错误，2 数据错误，3 数值错误
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        config = Config.resolve(args.config, args.overrides, _flags(args))
        if args.out is not None:
            setup_logging(args.out)
            Config.write_resolved(config, args.out)
        return HANDLERS[args.command](args, config)
    except SystemExit as e:
        # --help 正常退出
        return int(e.code or 0)
    except FcmError as e:
        print(f"错误: {e}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        print("\n操作被用户中断", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(run())
