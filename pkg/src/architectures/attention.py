# -*- coding: utf-8 -*-
"""
集合注意力模块
用途：实现多头注意力块（MAB）、诱导集合注意力块（ISAB，可学习诱导点或FPS采样诱导点）、
     ReLU线性注意力（reluFormer）以及全局聚合（mean/max/PMA）
"""

import math
from dataclasses import dataclass
from typing import Optional, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..utils.errors import ShapeError
from ..utils.geometry import fps_select

DENOMINATOR_FLOOR = 1e-6


@dataclass(frozen=True)
class Learned:
    """可学习诱导点 I ∈ R^{m×d}"""
    m: int = 16


@dataclass(frozen=True)
class FpsSampled:
    """每次前向传播在输入上做最远点采样，取被选中的行作为诱导点"""
    ratio: float = 0.0005
    min_count: int = 16


InducingSource = Union[Learned, FpsSampled]


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    # (n, d) -> (h, n, d/h)
    n, d = x.shape
    return x.view(n, heads, d // heads).transpose(0, 1)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    # (h, n, d/h) -> (n, d)
    h, n, dh = x.shape
    return x.transpose(0, 1).reshape(n, h * dh)


class MultiheadAttention(nn.Module):
    """
    缩放点积多头注意力
    用途：查询 X 对键值 Y 做交叉注意力；sum_projections=True 时退化为逐事件的 (XW_Q + XW_K + XW_V)W_O，
         不再在事件之间混合信息
    """

    def __init__(self, dim: int, heads: int, sum_projections: bool = False):
        super(MultiheadAttention, self).__init__()
        if dim % heads != 0:
            raise ShapeError(f"注意力维度 {dim} 不能被头数 {heads} 整除")
        self.dim = dim
        self.heads = heads
        self.sum_projections = sum_projections
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        self.last_attention_numel = 0
        self.last_attention: Optional[torch.Tensor] = None
        self.keep_attention = False

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        """
        前向传播
        参数：
            x: 查询集合 (n, d)
            y: 键值集合 (m, d)
        返回值：(n, d)
        """
        if x.dim() != 2 or y.dim() != 2 or x.shape[1] != self.dim or y.shape[1] != self.dim:
            raise ShapeError(f"mab: 需要 (n, {self.dim}) 与 (m, {self.dim}) 输入, "
                             f"实际 {tuple(x.shape)} 与 {tuple(y.shape)}")
        if self.sum_projections:
            self.last_attention_numel = 0
            return self.out_proj(self.q_proj(x) + self.k_proj(x) + self.v_proj(x))

        q = _split_heads(self.q_proj(x), self.heads)
        k = _split_heads(self.k_proj(y), self.heads)
        v = _split_heads(self.v_proj(y), self.heads)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.dim // self.heads)
        attention = F.softmax(scores, dim=-1)
        self.last_attention_numel = attention.numel()
        self.last_attention = attention.detach() if self.keep_attention else None
        return self.out_proj(_merge_heads(attention @ v))


def row_feed_forward(dim: int) -> nn.Sequential:
    """逐行前馈网络 rFF：linear → GELU → linear"""
    return nn.Sequential(nn.Linear(dim, dim), nn.GELU(), nn.Linear(dim, dim))


class MAB(nn.Module):
    """
    多头注意力块
    H' = LN(X + Multihead(X, Y, Y))，输出 LN(H' + rFF(H'))
    """

    def __init__(self, dim: int, heads: int, sum_projections: bool = False):
        super(MAB, self).__init__()
        self.attention = MultiheadAttention(dim, heads, sum_projections)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.rff = row_feed_forward(dim)

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x + self.attention(x, y))
        return self.norm2(h + self.rff(h))


class ISAB(nn.Module):
    """
    诱导集合注意力块
    用途：H = MAB(I, X)，输出 MAB(X, H)，复杂度 O(mn)；
         I 为可学习参数（Learned），或在每次前向传播时由FPS从输入行中选出（FpsSampled）
    """

    def __init__(self, dim: int, heads: int, source: InducingSource = Learned(),
                 sum_projections: bool = False, seed: int = 0):
        """
        参数：
            dim: 隐藏维度
            heads: 注意力头数
            source: 诱导点来源
            sum_projections: 是否使用无注意力消融（投影求和）
            seed: FPS首点随机种子；评估模式下每次都用该种子，训练模式下沿用层内的随机数生成器
        """
        super(ISAB, self).__init__()
        self.dim = dim
        self.source = source
        self.seed = seed
        self.mab_inducing = MAB(dim, heads, sum_projections)
        self.mab_output = MAB(dim, heads, sum_projections)
        if isinstance(source, Learned):
            if source.m < 1:
                raise ShapeError(f"isab: 诱导点数量必须为正数, 实际 {source.m}")
            self.inducing = nn.Parameter(torch.randn(source.m, dim) / math.sqrt(dim))
        else:
            self.inducing = None
            self._generator = torch.Generator().manual_seed(seed)
        self.last_indices: Optional[torch.Tensor] = None
        self.last_attention_numel = 0

    def inducing_points(self, x: torch.Tensor) -> torch.Tensor:
        if self.inducing is not None:
            return self.inducing
        if self.training:
            seed = int(torch.randint(0, 2 ** 31 - 1, (1,), generator=self._generator))
        else:
            seed = self.seed
        selection = fps_select(x.detach(), ratio=self.source.ratio, min_count=self.source.min_count, seed=seed)
        self.last_indices = torch.as_tensor(selection.indices, dtype=torch.long, device=x.device)
        return x.index_select(0, self.last_indices)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        inducing = self.inducing_points(x)
        h = self.mab_inducing(inducing, x)
        out = self.mab_output(x, h)
        self.last_attention_numel = (self.mab_inducing.attention.last_attention_numel
                                     + self.mab_output.attention.last_attention_numel)
        return out


def relu_linear_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """
    ReLU核线性注意力
    参数：
        q, k, v: (..., n, d) 张量
    返回值：(..., n, d)，按 φ(Q)[φ(K)ᵀV] / φ(Q)[φ(K)ᵀ1] 的顺序计算（φ = ReLU），分母下限 1e-6
    """
    if q.shape != k.shape or k.shape != v.shape:
        raise ShapeError(f"relu_linear_attention: Q/K/V 形状必须一致, "
                         f"实际 {tuple(q.shape)}, {tuple(k.shape)}, {tuple(v.shape)}")
    phi_q, phi_k = F.relu(q), F.relu(k)
    kv = phi_k.transpose(-2, -1) @ v                    # (..., d, d)
    k_sum = phi_k.sum(dim=-2, keepdim=True)             # (..., 1, d)
    numerator = phi_q @ kv
    denominator = (phi_q * k_sum).sum(dim=-1, keepdim=True).clamp_min(DENOMINATOR_FLOOR)
    return numerator / denominator


class ReluFormerBlock(nn.Module):
    """
    reluFormer块
    用途：用ReLU线性注意力替代softmax的自注意力，外层与MAB相同的残差、层归一化和rFF
    """

    def __init__(self, dim: int, heads: int):
        super(ReluFormerBlock, self).__init__()
        if dim % heads != 0:
            raise ShapeError(f"注意力维度 {dim} 不能被头数 {heads} 整除")
        self.heads = heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.rff = row_feed_forward(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        q = _split_heads(self.q_proj(x), self.heads)
        k = _split_heads(self.k_proj(x), self.heads)
        v = _split_heads(self.v_proj(x), self.heads)
        attended = self.out_proj(_merge_heads(relu_linear_attention(q, k, v)))
        h = self.norm1(x + attended)
        return self.norm2(h + self.rff(h))


class PMA(nn.Module):
    """
    多头注意力池化：一个可学习种子向量 S，单头，输出 MAB(S, rFF(X))
    """

    def __init__(self, dim: int, heads: int = 1):
        super(PMA, self).__init__()
        self.seed_vector = nn.Parameter(torch.randn(1, dim) / math.sqrt(dim))
        self.rff = row_feed_forward(dim)
        self.mab = MAB(dim, heads)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.mab(self.seed_vector, self.rff(x))


class GlobalAggregate(nn.Module):
    """
    全局聚合
    用途：把 (n, d) 集合汇总为 (1, d) 向量，模式为 mean、max 或 pma；调用方负责把结果拼接到每个事件向量上
    """

    MODES = ("mean", "max", "pma")

    def __init__(self, dim: int, mode: str = "mean"):
        super(GlobalAggregate, self).__init__()
        if mode not in self.MODES:
            raise ValueError(f"不支持的全局聚合方式: {mode}")
        self.mode = mode
        self.pma = PMA(dim, heads=1) if mode == "pma" else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[0] < 1:
            raise ShapeError("global_aggregate: 集合为空")
        if self.mode == "mean":
            return x.mean(dim=0, keepdim=True)
        if self.mode == "max":
            return x.amax(dim=0, keepdim=True)
        return self.pma(x)
