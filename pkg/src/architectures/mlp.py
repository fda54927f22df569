# -*- coding: utf-8 -*-
"""
逐事件MLP模块
用途：线性层 → GELU → 批归一化的堆叠，作为无上下文基线和其他模型的逐事件编码器
"""

from typing import List

import torch
import torch.nn as nn
import torch.nn.functional as F


class MLPBlock(nn.Module):
    """
    单个MLP块：linear → GELU → batchnorm
    """

    def __init__(self, in_dim: int, out_dim: int, momentum: float = 0.1):
        super(MLPBlock, self).__init__()
        self.linear = nn.Linear(in_dim, out_dim)
        self.norm = nn.BatchNorm1d(out_dim, momentum=momentum)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.gelu(self.linear(x))
        if self.training and h.shape[0] < 2:
            # 单个事件无法估计批统计量，改用运行统计量
            return F.batch_norm(h, self.norm.running_mean, self.norm.running_var,
                                self.norm.weight, self.norm.bias, training=False, eps=self.norm.eps)
        return self.norm(h)


class MLPStack(nn.Module):
    """
    MLP块的堆叠
    参数：
        dims: 各层维度，如 [F, 32, 32, 32, 32] 表示4个MLP块
    """

    def __init__(self, dims: List[int]):
        super(MLPStack, self).__init__()
        if len(dims) < 2:
            raise ValueError(f"MLPStack 至少需要输入和输出两个维度, 实际 {dims}")
        self.blocks = nn.ModuleList([MLPBlock(dims[i], dims[i + 1]) for i in range(len(dims) - 1)])
        self.out_dim = dims[-1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return x
