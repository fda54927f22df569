# -*- coding: utf-8 -*-
"""
ASAP图池化（简化版）
用途：以1跳自我网络为候选簇，用注意力给出成员隶属度，用可训练的适应度函数选出前 target 个簇；
     保留软分配矩阵 S，用于把池化后的预测恢复到每个事件
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core.tensor_ops import scatter_sum, segment_softmax
from ..utils.errors import DataError, ShapeError
from ..utils.geometry import KnnGraph
from .gnn import GraphLike, edge_index_of, with_self_loops


class AsapPool(nn.Module):
    """
    ASAP池化层
    用途：
        1. 簇候选 = 每个节点及其邻居（自我网络）
        2. 主查询 = 簇成员特征的逐维最大值，隶属度 β 由 LeakyReLU(q·W m_c + k·x_j) 在簇内softmax得到
        3. 簇特征 = Σ β x_j，适应度 φ = sigmoid(linear(簇特征))
        4. 保留适应度最高的 target 个簇，池化特征 = φ · 簇特征
    """

    def __init__(self, dim: int, negative_slope: float = 0.2):
        super(AsapPool, self).__init__()
        self.query = nn.Linear(dim, dim)
        self.score_query = nn.Linear(dim, 1)
        self.score_member = nn.Linear(dim, 1)
        self.fitness = nn.Linear(dim, 1)
        self.negative_slope = negative_slope

    def forward(self, x: torch.Tensor, graph: GraphLike, target_nodes: int
                ) -> Tuple[torch.Tensor, KnnGraph, torch.Tensor]:
        """
        参数：
            x: (n, d) 节点特征
            graph: 邻居图
            target_nodes: 保留的簇数（必须小于 n）
        返回值：(池化特征 (target, d), 池化图, 分配矩阵 S (n, target))
        """
        n = x.shape[0]
        if not 1 <= target_nodes < n:
            raise DataError(f"asap_pool: 目标节点数必须满足 1 <= target < n, 实际 target={target_nodes}, n={n}")
        cluster, member = with_self_loops(edge_index_of(graph, n, x.device), n)

        members = x.index_select(0, member)
        expand = cluster.unsqueeze(-1).expand_as(members)
        master = torch.full_like(x, float("-inf")).scatter_reduce(0, expand, members, reduce="amax",
                                                                  include_self=True)
        scores = (self.score_query(self.query(master)).squeeze(-1)[cluster]
                  + self.score_member(members).squeeze(-1))
        beta = segment_softmax(F.leaky_relu(scores, self.negative_slope), cluster, n)
        cluster_features = scatter_sum(beta.unsqueeze(-1) * members, cluster, n)
        fitness = torch.sigmoid(self.fitness(cluster_features)).squeeze(-1)

        selected = torch.argsort(fitness.detach(), descending=True, stable=True)[:target_nodes]
        pooled = cluster_features[selected] * fitness[selected].unsqueeze(-1)

        position = torch.full((n,), -1, dtype=torch.long, device=x.device)
        position[selected] = torch.arange(target_nodes, device=x.device)
        keep = position[cluster] >= 0
        assignment = torch.zeros(n, target_nodes, dtype=x.dtype, device=x.device)
        assignment = assignment.index_put((member[keep], position[cluster[keep]]), beta[keep], accumulate=True)
        return pooled, pooled_graph(assignment), assignment


def pooled_graph(assignment: torch.Tensor) -> KnnGraph:
    """
    池化图：两个簇共享任一成员时相连（双向边，无自环）
    """
    membership = (assignment.detach() > 0).to(torch.float64)
    shared = (membership.transpose(0, 1) @ membership) > 0
    shared.fill_diagonal_(False)
    src, dst = torch.nonzero(shared, as_tuple=True)
    return KnnGraph(int(assignment.shape[1]), src.cpu().numpy().astype(np.int64),
                    dst.cpu().numpy().astype(np.int64))


def asap_unpool(pooled_logits: torch.Tensor, assignments: Sequence[torch.Tensor],
                events: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    把池化后的预测恢复到每个事件
    参数：
        pooled_logits: (m, c) 最终池化节点上的输出
        assignments: 各池化阶段的分配矩阵 [S1 (n, t1), S2 (t1, t2), ...]
        events: (n, F) 输入空间中的事件，用于给未被任何保留簇覆盖的事件找最近的簇中心
    返回值：(n, c)，逐事件输出 = 行归一化后的 (S1·S2·…) 乘以 pooled_logits
    """
    if not assignments:
        return pooled_logits
    composed = assignments[0]
    for matrix in assignments[1:]:
        if composed.shape[1] != matrix.shape[0]:
            raise ShapeError(f"asap_unpool: 分配矩阵无法相乘 {tuple(composed.shape)} x {tuple(matrix.shape)}")
        composed = composed @ matrix
    if composed.shape[1] != pooled_logits.shape[0]:
        raise ShapeError(f"asap_unpool: 分配矩阵列数 {composed.shape[1]} 与池化节点数 {pooled_logits.shape[0]} 不一致")

    row_sum = composed.sum(dim=1, keepdim=True)
    covered = row_sum.squeeze(-1) > 0
    weights = torch.where(covered.unsqueeze(-1), composed / row_sum.clamp_min(1e-12), torch.zeros_like(composed))

    if not bool(covered.all()):
        if events is None:
            raise DataError("asap_unpool: 存在未被覆盖的事件, 需要提供输入空间事件以寻找最近的簇中心")
        weights = weights + _nearest_centroid_rows(composed.detach(), events.detach(), covered)
    return weights @ pooled_logits


def _nearest_centroid_rows(composed: torch.Tensor, events: torch.Tensor, covered: torch.Tensor) -> torch.Tensor:
    events = events.to(composed.dtype)
    mass = composed.sum(dim=0).clamp_min(1e-12)
    centroids = (composed.transpose(0, 1) @ events) / mass.unsqueeze(-1)
    uncovered = torch.nonzero(~covered, as_tuple=True)[0]
    distances = torch.cdist(events[uncovered], centroids)
    nearest = torch.argmin(distances, dim=1)
    rows = torch.zeros_like(composed)
    rows[uncovered, nearest] = 1.0
    return rows


class AsapStage(nn.Module):
    """两层图卷积后接一次ASAP池化"""

    def __init__(self, layers: List[nn.Module], dim: int):
        super(AsapStage, self).__init__()
        self.layers = nn.ModuleList(layers)
        self.pool = AsapPool(dim)

    def convolve(self, x: torch.Tensor, graph: GraphLike) -> torch.Tensor:
        for layer in self.layers:
            x = F.gelu(layer(x, graph))
        return x
