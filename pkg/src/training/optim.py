# -*- coding: utf-8 -*-
"""
优化器与学习率调度
用途：余弦退火学习率（周期重启或到达周期后保持最小值），以及按参数组设置权重衰减的AdamW
"""

import math
from typing import Any, Dict, List

import torch
import torch.nn as nn

from ..architectures.model_zoo import gat_parameters
from ..utils.errors import ShapeError

SCHEDULES = ("restart", "clamped")


def cosine_lr(t: int, lr_max: float = 1e-3, lr_min: float = 2e-4, period: int = 10,
              schedule: str = "restart") -> float:
    """
    余弦退火学习率
    参数：
        t: 轮次（从0开始）
        lr_max: 最大学习率
        lr_min: 最小学习率
        period: 周期 T
        schedule: restart 时按 t mod T 周期重启；clamped 时 t >= T 后保持 lr_min
    返回值：lr_min + ½(lr_max − lr_min)(1 + cos(π·τ/T))
    """
    if t < 0:
        raise ValueError(f"轮次不能为负数: {t}")
    if period < 1:
        raise ValueError(f"余弦周期必须为正整数: {period}")
    if schedule == "restart":
        tau = t % period
    elif schedule == "clamped":
        if t >= period:
            return lr_min
        tau = t
    else:
        raise ValueError(f"不支持的学习率调度方式: {schedule}")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * tau / period))


def parameter_groups(model: nn.Module, gat_weight_decay: float) -> List[Dict[str, Any]]:
    """
    划分参数组：GAT层参数使用 gat_weight_decay，其余参数不做权重衰减
    """
    gat_ids = {id(p) for p in gat_parameters(model)}
    gat = [p for p in model.parameters() if id(p) in gat_ids]
    others = [p for p in model.parameters() if id(p) not in gat_ids]
    groups = [{"params": others, "weight_decay": 0.0, "name": "default"}]
    if gat:
        groups.append({"params": gat, "weight_decay": gat_weight_decay, "name": "gat"})
    return groups


def build_optimizer(model: nn.Module, lr: float = 1e-3, gat_weight_decay: float = 0.2) -> torch.optim.AdamW:
    """
    创建AdamW优化器（β1=0.9, β2=0.999, ε=1e-8，解耦权重衰减）
    """
    return torch.optim.AdamW(parameter_groups(model, gat_weight_decay), lr=lr,
                             betas=(0.9, 0.999), eps=1e-8)


def adamw_step(optimizer: torch.optim.Optimizer, lr: float) -> None:
    """
    以给定学习率执行一步AdamW更新
    参数：
        optimizer: 优化器，各参数组的权重衰减已在创建时设定
        lr: 本步学习率
    """
    for group in optimizer.param_groups:
        for p in group["params"]:
            if p.grad is not None and p.grad.shape != p.shape:
                raise ShapeError(f"梯度形状 {tuple(p.grad.shape)} 与参数形状 {tuple(p.shape)} 不一致")
        group["lr"] = lr
    optimizer.step()
