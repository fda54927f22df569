# -*- coding: utf-8 -*-
"""
梯度检查用例
用途：为每个算子和每个网络层注册随机小规模用例（n <= 16, d <= 8，float64），
     随机层在评估模式下检查；标量函数为输出与随机投影的逐元素乘积之和
"""

from typing import Callable, List, Optional, Tuple

import torch
import torch.nn as nn

from .grad_check import GradcheckResult, GradcheckSuite
from .tensor_ops import forward_op

DTYPE = torch.float64


def _rand(generator: torch.Generator, *shape: int) -> torch.Tensor:
    return torch.randn(*shape, generator=generator, dtype=DTYPE)


def _size(generator: torch.Generator, low: int = 2, high: int = 6) -> int:
    return int(torch.randint(low, high + 1, (1,), generator=generator))


def _projected(fn: Callable[[torch.Tensor], torch.Tensor], generator: torch.Generator,
               out_shape: Tuple[int, ...]) -> Callable[[torch.Tensor], torch.Tensor]:
    weights = _rand(generator, *out_shape)
    return lambda x: (fn(x) * weights).sum()


def _away_from_zero(generator: torch.Generator, *shape: int, margin: float = 1e-2) -> torch.Tensor:
    # 拒绝 |x| < margin 的输入，避开ReLU拐点
    x = _rand(generator, *shape)
    while bool((x.abs() < margin).any()):
        redraw = x.abs() < margin
        x = torch.where(redraw, _rand(generator, *shape), x)
    return x


def _random_graph(generator: torch.Generator, n: int, k: int = 2):
    from ..utils.geometry import knn_graph
    points = _rand(generator, n, 3)
    return knn_graph(points, min(k, n - 1))


def _eval_module(module: nn.Module) -> nn.Module:
    return module.to(DTYPE).eval()


def register_op_cases(suite: GradcheckSuite) -> None:
    """注册全部算子用例"""

    def binary(kind: str):
        def builder(g):
            n, d = _size(g), _size(g)
            other = _rand(g, n, d)
            return _projected(lambda x: forward_op(kind, [x, other]), g, (n, d)), _rand(g, n, d)
        return builder

    for kind in ("add", "sub", "mul"):
        suite.register(kind, binary(kind))

    @suite.register("matmul")
    def matmul(g):
        n, d, m = _size(g), _size(g), _size(g)
        b = _rand(g, d, m)
        return _projected(lambda x: forward_op("matmul", [x, b]), g, (n, m)), _rand(g, n, d)

    @suite.register("concat")
    def concat(g):
        n, d = _size(g), _size(g)
        other = _rand(g, n, 3)
        return _projected(lambda x: forward_op("concat", [x, other], {"axis": 1}), g, (n, d + 3)), _rand(g, n, d)

    def reduction(kind: str):
        def builder(g):
            n, d = _size(g), _size(g)
            return _projected(lambda x: forward_op(kind, [x], {"axis": 0}), g, (d,)), _rand(g, n, d)
        return builder

    for kind in ("reduce_sum", "reduce_mean", "reduce_max"):
        suite.register(kind, reduction(kind))

    @suite.register("softmax")
    def softmax(g):
        n, d = _size(g), _size(g)
        return _projected(lambda x: forward_op("softmax", [x], {"axis": 1}), g, (n, d)), _rand(g, n, d)

    @suite.register("relu")
    def relu(g):
        n, d = _size(g), _size(g)
        return _projected(lambda x: forward_op("relu", [x]), g, (n, d)), _away_from_zero(g, n, d)

    for kind in ("gelu", "sigmoid", "transpose"):
        def builder(g, kind=kind):
            n, d = _size(g), _size(g)
            out = (d, n) if kind == "transpose" else (n, d)
            return _projected(lambda x: forward_op(kind, [x]), g, out), _rand(g, n, d)
        suite.register(kind, builder)

    @suite.register("scale")
    def scale(g):
        n, d = _size(g), _size(g)
        return _projected(lambda x: forward_op("scale", [x], {"factor": 0.7}), g, (n, d)), _rand(g, n, d)

    @suite.register("layernorm")
    def layernorm(g):
        n, d = _size(g), _size(g, 2, 8)
        weight, bias = _rand(g, d), _rand(g, d)
        return _projected(lambda x: forward_op("layernorm", [x, weight, bias]), g, (n, d)), _rand(g, n, d)

    @suite.register("batchnorm")
    def batchnorm(g):
        n, d = _size(g), _size(g)
        attrs = {"running_mean": _rand(g, d), "running_var": _rand(g, d).abs() + 0.5, "training": False}
        weight, bias = _rand(g, d), _rand(g, d)
        return _projected(lambda x: forward_op("batchnorm", [x, weight, bias], attrs), g, (n, d)), _rand(g, n, d)

    @suite.register("dropout")
    def dropout(g):
        n, d = _size(g), _size(g)
        attrs = {"p": 0.2, "training": False}
        return _projected(lambda x: forward_op("dropout", [x], attrs), g, (n, d)), _rand(g, n, d)

    @suite.register("linear")
    def linear(g):
        n, d, m = _size(g), _size(g), _size(g)
        weight, bias = _rand(g, m, d), _rand(g, m)
        return _projected(lambda x: forward_op("linear", [x, weight, bias]), g, (n, m)), _rand(g, n, d)

    @suite.register("gather")
    def gather(g):
        n, d = _size(g), _size(g)
        index = torch.randint(0, n, (n + 2,), generator=g)
        return _projected(lambda x: forward_op("gather", [x], {"index": index}), g, (n + 2, d)), _rand(g, n, d)

    @suite.register("scatter_sum")
    def scatter(g):
        n, d, size = _size(g), _size(g), _size(g)
        index = torch.randint(0, size, (n,), generator=g)
        attrs = {"index": index, "size": size}
        return _projected(lambda x: forward_op("scatter_sum", [x], attrs), g, (size, d)), _rand(g, n, d)

    @suite.register("segment_softmax")
    def segment(g):
        n, size = _size(g, 3, 8), _size(g)
        attrs = {"index": torch.randint(0, size, (n,), generator=g), "size": size}
        return _projected(lambda x: forward_op("segment_softmax", [x], attrs), g, (n,)), _rand(g, n)


def register_layer_cases(suite: GradcheckSuite) -> None:
    """注册全部网络层用例"""
    from ..architectures.asap import AsapPool, asap_unpool
    from ..architectures.attention import (FpsSampled, GlobalAggregate, ISAB, Learned, MAB,
                                           ReluFormerBlock, relu_linear_attention)
    from ..architectures.gnn import gnn_layer
    from ..architectures.mlp import MLPStack
    from ..architectures.pointnet import PointNetSegmentation

    def _seed_module(g):
        torch.manual_seed(int(torch.randint(0, 2 ** 31 - 1, (1,), generator=g)))

    @suite.register("mab")
    def mab(g):
        _seed_module(g)
        n, m, d = _size(g), _size(g), 8
        layer = _eval_module(MAB(d, 4))
        y = _rand(g, m, d)
        return _projected(lambda x: layer(x, y), g, (n, d)), _rand(g, n, d)

    @suite.register("mab_no_attention")
    def mab_no_attention(g):
        _seed_module(g)
        n, d = _size(g), 8
        layer = _eval_module(MAB(d, 4, sum_projections=True))
        y = _rand(g, 3, d)
        return _projected(lambda x: layer(x, y), g, (n, d)), _rand(g, n, d)

    @suite.register("isab_learned")
    def isab_learned(g):
        _seed_module(g)
        n, d = _size(g, 2, 16), 8
        layer = _eval_module(ISAB(d, 4, Learned(4)))
        return _projected(layer, g, (n, d)), _rand(g, n, d)

    @suite.register("isab_fps")
    def isab_fps(g):
        _seed_module(g)
        n, d = _size(g, 2, 16), 8
        layer = _eval_module(ISAB(d, 4, FpsSampled(0.5, 2)))
        return _projected(layer, g, (n, d)), _rand(g, n, d)

    @suite.register("relu_linear_attention")
    def relu_attention(g):
        n, d = _size(g, 2, 16), _size(g, 2, 8)
        k, v = _away_from_zero(g, n, d), _rand(g, n, d)
        return _projected(lambda q: relu_linear_attention(q, k, v), g, (n, d)), _away_from_zero(g, n, d)

    @suite.register("reluformer_block")
    def reluformer(g):
        _seed_module(g)
        n, d = _size(g, 2, 16), 8
        layer = _eval_module(ReluFormerBlock(d, 4))
        return _projected(layer, g, (n, d)), _rand(g, n, d)

    for mode in GlobalAggregate.MODES:
        def aggregate(g, mode=mode):
            _seed_module(g)
            n, d = _size(g), 8
            layer = _eval_module(GlobalAggregate(d, mode))
            return _projected(layer, g, (1, d)), _rand(g, n, d)
        suite.register(f"global_aggregate_{mode}", aggregate)

    @suite.register("mlp_block")
    def mlp_block(g):
        _seed_module(g)
        n, d = _size(g), _size(g, 2, 8)
        layer = _eval_module(MLPStack([d, 8, 8]))
        # 评估模式下使用非平凡的运行统计量
        for block in layer.blocks:
            block.norm.running_mean.copy_(_rand(g, 8) * 0.1)
            block.norm.running_var.copy_(_rand(g, 8).abs() + 0.5)
        return _projected(layer, g, (n, 8)), _rand(g, n, d)

    for variant in ("standard", "adapted"):
        def pointnet(g, variant=variant):
            _seed_module(g)
            n, d = _size(g), _size(g, 2, 8)
            layer = _eval_module(PointNetSegmentation(d, variant, event_dim=6, global_dim=8, head_dims=(8, 4)))
            return _projected(layer, g, (n, 4)), _rand(g, n, d)
        suite.register(f"pointnet_{variant}", pointnet)

    for kind in ("gcn", "gat", "gin"):
        def graph_layer(g, kind=kind):
            _seed_module(g)
            n, d = _size(g, 3, 16), _size(g, 2, 8)
            layer = _eval_module(gnn_layer(kind, d, 6))
            graph = _random_graph(g, n)
            return _projected(lambda x: layer(x, graph), g, (n, 6)), _rand(g, n, d)
        suite.register(f"gnn_{kind}", graph_layer)

    @suite.register("asap_pool")
    def asap_pool(g):
        _seed_module(g)
        n, d = _size(g, 4, 12), 6
        layer = _eval_module(AsapPool(d))
        graph = _random_graph(g, n)
        target = max(1, n // 2)
        weights = _rand(g, target, d)
        return (lambda x: (layer(x, graph, target)[0] * weights).sum()), _rand(g, n, d)

    @suite.register("asap_unpool")
    def asap_unpool_case(g):
        n, t1, t2 = _size(g, 4, 8), 3, 2
        s1 = _rand(g, n, t1).abs()
        s2 = _rand(g, t1, t2).abs()
        return _projected(lambda x: asap_unpool(x, [s1, s2]), g, (n, 2)), _rand(g, t2, 2)


def build_default_suite(tolerance: float = 1e-3, instances: int = 20, eps: float = 1e-6,
                        seed: int = 0) -> GradcheckSuite:
    """
    创建包含全部算子和网络层用例的梯度检查套件
    """
    suite = GradcheckSuite(tolerance=tolerance, instances=instances, eps=eps, seed=seed)
    register_op_cases(suite)
    register_layer_cases(suite)
    return suite


def run_gradcheck_suite(suite: Optional[GradcheckSuite] = None,
                        names: Optional[List[str]] = None) -> List[GradcheckResult]:
    """
    运行梯度检查套件并打印每个用例的最大误差
    参数：
        suite: 套件，为None时使用默认套件
        names: 只运行指定用例
    返回值：检查结果列表；调用方根据 passed 决定退出码
    """
    suite = suite if suite is not None else build_default_suite()
    unknown = [name for name in (names or []) if name not in suite.cases]
    if unknown:
        raise ValueError(f"未知的梯度检查用例: {', '.join(unknown)}")
    results = []
    for result in suite.run(names):
        status = "通过" if result.passed else "失败"
        print(f"  {result.name:<28} max_error={result.max_error:.3e}  {status} {result.message}".rstrip())
        results.append(result)
    return results
