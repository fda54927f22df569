# -*- coding: utf-8 -*-
"""
图神经网络层
用途：在k-NN图上实现GCN、GAT、GIN三种消息传递层；
     边 (src, dst) 表示 dst 是 src 的邻居，消息从 dst 传到 src
"""

import math
from typing import Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core.tensor_ops import gather_rows, scatter_sum, segment_softmax
from ..utils.errors import ShapeError
from ..utils.geometry import KnnGraph

GNN_KINDS = ("gcn", "gat", "gin")

GraphLike = Union[KnnGraph, torch.Tensor]


def edge_index_of(graph: GraphLike, n_nodes: int, device=None) -> torch.Tensor:
    """
    取得 (2, E) 边索引并检查节点数
    参数：
        graph: KnnGraph 或 (2, E) long 张量
        n_nodes: 输入特征的行数
    """
    if isinstance(graph, KnnGraph):
        if graph.n_nodes != n_nodes:
            raise ShapeError(f"gnn_layer: 图节点数 {graph.n_nodes} 与特征行数 {n_nodes} 不一致")
        edge_index = graph.to_edge_index(device=device)
    else:
        edge_index = graph.to(device=device, dtype=torch.long)
    if edge_index.numel() and (int(edge_index.min()) < 0 or int(edge_index.max()) >= n_nodes):
        raise ShapeError(f"gnn_layer: 节点索引越界, 范围 [{int(edge_index.min())}, {int(edge_index.max())}], "
                         f"节点数 {n_nodes}")
    return edge_index


def with_self_loops(edge_index: torch.Tensor, n_nodes: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """返回 (接收端索引, 发送端索引)，包含每个节点的自环"""
    loops = torch.arange(n_nodes, device=edge_index.device)
    return torch.cat([edge_index[0], loops]), torch.cat([edge_index[1], loops])


class GCNLayer(nn.Module):
    """
    GCN层：H' = D̂^{-1/2} Â D̂^{-1/2} X W，Â = A + I，度按行（出边+自环）计算
    """

    def __init__(self, in_dim: int, out_dim: int, bias: bool = True):
        super(GCNLayer, self).__init__()
        self.linear = nn.Linear(in_dim, out_dim, bias=False)
        self.bias = nn.Parameter(torch.zeros(out_dim)) if bias else None

    def forward(self, x: torch.Tensor, graph: GraphLike) -> torch.Tensor:
        n = x.shape[0]
        receiver, sender = with_self_loops(edge_index_of(graph, n, x.device), n)
        degree = scatter_sum(torch.ones_like(receiver, dtype=x.dtype), receiver, n)
        inv_sqrt = degree.pow(-0.5)
        coefficient = inv_sqrt[receiver] * inv_sqrt[sender]
        h = self.linear(x)
        out = scatter_sum(coefficient.unsqueeze(-1) * gather_rows(h, sender), receiver, n)
        return out + self.bias if self.bias is not None else out


class GATLayer(nn.Module):
    """
    单头GAT层
    用途：e_ij = LeakyReLU(aᵀ[Wx_i ‖ Wx_j])，在邻居∪自身上做softmax得到 α_ij，输出 Σ α_ij W x_j；
         训练时对 α 做dropout
    """

    def __init__(self, in_dim: int, out_dim: int, dropout: float = 0.2, negative_slope: float = 0.2):
        super(GATLayer, self).__init__()
        self.linear = nn.Linear(in_dim, out_dim, bias=False)
        bound = 1.0 / math.sqrt(out_dim)
        self.att_receiver = nn.Parameter(torch.empty(out_dim).uniform_(-bound, bound))
        self.att_sender = nn.Parameter(torch.empty(out_dim).uniform_(-bound, bound))
        self.bias = nn.Parameter(torch.zeros(out_dim))
        self.dropout = dropout
        self.negative_slope = negative_slope

    def forward(self, x: torch.Tensor, graph: GraphLike, return_attention: bool = False):
        """
        参数：
            x: (n, in_dim)
            graph: 邻居图
            return_attention: 为True时同时返回 (接收端, 发送端, α)
        """
        n = x.shape[0]
        receiver, sender = with_self_loops(edge_index_of(graph, n, x.device), n)
        h = self.linear(x)
        scores = (h @ self.att_receiver)[receiver] + (h @ self.att_sender)[sender]
        alpha = segment_softmax(F.leaky_relu(scores, self.negative_slope), receiver, n)
        weights = F.dropout(alpha, p=self.dropout, training=self.training)
        out = scatter_sum(weights.unsqueeze(-1) * gather_rows(h, sender), receiver, n) + self.bias
        if return_attention:
            return out, (receiver, sender, alpha)
        return out


class GINLayer(nn.Module):
    """
    GIN层：H'_i = MLP((1 + ε) x_i + Σ_{j∈N(i)} x_j)，ε 可训练，初始为0
    """

    def __init__(self, in_dim: int, out_dim: int):
        super(GINLayer, self).__init__()
        self.eps = nn.Parameter(torch.zeros(1))
        self.mlp = nn.Sequential(nn.Linear(in_dim, out_dim), nn.GELU(), nn.Linear(out_dim, out_dim))

    def forward(self, x: torch.Tensor, graph: GraphLike) -> torch.Tensor:
        n = x.shape[0]
        edge_index = edge_index_of(graph, n, x.device)
        neighbors = scatter_sum(gather_rows(x, edge_index[1]), edge_index[0], n)
        return self.mlp((1.0 + self.eps) * x + neighbors)


def gnn_layer(kind: str, in_dim: int, out_dim: int, gat_dropout: float = 0.2) -> nn.Module:
    """
    按类型创建图层
    参数：
        kind: gcn、gat 或 gin
        in_dim: 输入维度
        out_dim: 输出维度
        gat_dropout: GAT注意力系数dropout
    """
    if kind == "gcn":
        return GCNLayer(in_dim, out_dim)
    if kind == "gat":
        return GATLayer(in_dim, out_dim, dropout=gat_dropout)
    if kind == "gin":
        return GINLayer(in_dim, out_dim)
    raise ValueError(f"不支持的图层类型: {kind}")
