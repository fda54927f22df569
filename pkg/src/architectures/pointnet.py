# -*- coding: utf-8 -*-
"""
PointNet分割网络
用途：逐事件特征与最大池化得到的全局特征拼接后做逐事件分类；
     standard 变体的事件特征为128维，adapted 变体把事件特征提升到与全局特征相同的1024维
"""

from typing import Tuple

import torch
import torch.nn as nn

from .mlp import MLPStack

VARIANTS = ("standard", "adapted")


class PointNetSegmentation(nn.Module):
    """
    PointNet分割网络
    用途：local MLP → 事件特征；global MLP + 最大池化 → 全局向量；拼接后经分割头输出逐事件特征
    """

    def __init__(self, in_dim: int, variant: str = "standard", event_dim: int = 128, global_dim: int = 1024,
                 head_dims: Tuple[int, int] = (256, 128)):
        """
        参数：
            in_dim: 输入特征数
            variant: standard 或 adapted
            event_dim: standard 变体的事件特征维度
            global_dim: 全局特征维度
            head_dims: 分割头隐藏层维度
        """
        super(PointNetSegmentation, self).__init__()
        if variant not in VARIANTS:
            raise ValueError(f"不支持的PointNet变体: {variant}")
        self.variant = variant
        self.event_dim = global_dim if variant == "adapted" else event_dim
        self.global_dim = global_dim
        self.local = MLPStack([in_dim, 64, self.event_dim])
        self.global_mlp = MLPStack([self.event_dim, global_dim])
        self.concat_dim = self.event_dim + global_dim
        self.segmentation = MLPStack([self.concat_dim, head_dims[0], head_dims[1]])
        self.out_dim = head_dims[1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """
        前向传播
        参数：
            x: (n, F) 事件特征
        返回值：(n, out_dim) 分割头隐藏特征（预测头在模型层）
        """
        local = self.local(x)
        global_vector = self.global_mlp(local).amax(dim=0, keepdim=True)
        combined = torch.cat([local, global_vector.expand(local.shape[0], -1)], dim=1)
        return self.segmentation(combined)
