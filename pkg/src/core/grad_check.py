# -*- coding: utf-8 -*-
"""
梯度检查工具
用途：用中心差分校验自动求导得到的梯度，并维护可扩展的梯度检查用例注册表
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import torch

from ..utils.errors import NumericalError, ShapeError

# 用例构造函数：接收随机数生成器，返回 (标量函数, 输入张量)
CaseBuilder = Callable[[torch.Generator], Tuple[Callable[[torch.Tensor], torch.Tensor], torch.Tensor]]


def gradient_check(f: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor, eps: float = 1e-3) -> float:
    """
    计算解析梯度与中心差分梯度之间的最大相对误差
    参数：
        f: 标量函数
        x: 检查点（计算精度取 x 的数据类型）
        eps: 差分步长
    返回值：max |解析 - 数值| / max(1, |数值|)
    """
    if eps <= 0:
        raise ValueError(f"eps 必须为正数, 实际 {eps}")

    base = x.detach().clone()
    probe = base.clone().requires_grad_(True)
    value = f(probe)
    if value.numel() != 1:
        raise ShapeError(f"gradient_check: 函数输出必须是标量, 实际形状 {tuple(value.shape)}")
    if not torch.isfinite(value).all():
        raise NumericalError("gradient_check: 函数值不是有限数")

    (analytic,) = torch.autograd.grad(value.reshape(()), probe, allow_unused=True)
    if analytic is None:
        analytic = torch.zeros_like(base)
    if not torch.isfinite(analytic).all():
        raise NumericalError("gradient_check: 解析梯度包含非有限值")

    numeric = torch.zeros_like(base)
    flat = base.view(-1)
    numeric_flat = numeric.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + eps
            f_plus = float(f(base))
            flat[i] = original - eps
            f_minus = float(f(base))
            flat[i] = original
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NumericalError(f"gradient_check: 第 {i} 个坐标扰动后函数值不是有限数")
            numeric_flat[i] = (f_plus - f_minus) / (2.0 * eps)

    if base.numel() == 0:
        return 0.0
    error = (analytic - numeric).abs() / numeric.abs().clamp_min(1.0)
    return float(error.max())


@dataclass
class GradcheckResult:
    name: str
    max_error: float
    instances: int
    passed: bool
    message: str = ""


class GradcheckSuite:
    """
    梯度检查用例注册表
    用途：为每个算子和每个网络层注册随机用例构造函数，批量运行并汇总最大误差
    """

    def __init__(self, tolerance: float = 1e-3, instances: int = 20, eps: float = 1e-6, seed: int = 0):
        self.tolerance = tolerance
        self.instances = instances
        self.eps = eps
        self.seed = seed
        self.cases: Dict[str, CaseBuilder] = {}

    def register(self, name: str, builder: Optional[CaseBuilder] = None):
        """
        注册用例，可作为装饰器使用
        参数：
            name: 用例名称（算子名或层名）
            builder: 用例构造函数
        """
        if builder is not None:
            self.cases[name] = builder
            return builder

        def decorator(fn: CaseBuilder) -> CaseBuilder:
            self.cases[name] = fn
            return fn
        return decorator

    def run_case(self, name: str) -> GradcheckResult:
        builder = self.cases[name]
        generator = torch.Generator().manual_seed(self.seed)
        worst = 0.0
        try:
            for _ in range(self.instances):
                f, x = builder(generator)
                worst = max(worst, gradient_check(f, x, self.eps))
        except NumericalError as e:
            return GradcheckResult(name, float("inf"), self.instances, False, str(e))
        return GradcheckResult(name, worst, self.instances, worst <= self.tolerance)

    def run(self, names: Optional[List[str]] = None) -> List[GradcheckResult]:
        """
        运行全部（或指定）用例
        返回值：按注册顺序排列的检查结果
        """
        selected = names if names is not None else list(self.cases)
        return [self.run_case(name) for name in selected]
