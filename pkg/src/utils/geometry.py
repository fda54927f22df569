# -*- coding: utf-8 -*-
"""
几何工具模块
用途：在样本的完整特征空间上构建精确k-NN图，以及为诱导点选择执行最远点采样（FPS）
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch

from .errors import DataError

ArrayLike = Union[np.ndarray, torch.Tensor]

# 每个分块内距离矩阵允许的最大元素数
_BLOCK_ELEMENTS = 1 << 22


@dataclass
class KnnGraph:
    """
    有向邻居图
    用途：边 (src, dst) 表示 dst 是 src 的邻居；消息由 dst 流向 src，即每个节点在自身的近邻上聚合
    """
    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    k: Optional[int] = None

    @property
    def edges(self) -> np.ndarray:
        """(E, 2) 边列表"""
        return np.stack([self.src, self.dst], axis=1)

    @property
    def n_edges(self) -> int:
        return int(self.src.shape[0])

    def to_edge_index(self, device=None) -> torch.Tensor:
        """返回 (2, E) 的long张量，第0行为src，第1行为dst"""
        return torch.as_tensor(np.stack([self.src, self.dst]), dtype=torch.long, device=device)

    @classmethod
    def empty(cls, n_nodes: int) -> "KnnGraph":
        return cls(n_nodes, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), 0)

    @classmethod
    def from_edges(cls, n_nodes: int, edges, k: Optional[int] = None) -> "KnnGraph":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n_nodes):
            raise DataError(f"边索引越界: 节点数 {n_nodes}, 索引范围 [{edges.min()}, {edges.max()}]")
        return cls(n_nodes, edges[:, 0].copy(), edges[:, 1].copy(), k)


@dataclass
class FpsSelection:
    """最远点采样结果：按选择顺序排列的事件索引"""
    indices: np.ndarray
    ratio: float


def _as_numpy(events: ArrayLike) -> np.ndarray:
    if torch.is_tensor(events):
        events = events.detach().cpu().numpy()
    return np.asarray(events, dtype=np.float64)


def knn_graph(events: ArrayLike, k: int) -> KnnGraph:
    """
    构建精确k-NN图
    参数：
        events: (n, F) 事件矩阵，使用全部F个特征
        k: 每个节点的邻居数
    返回值：每个节点恰有k条出边、无自环的 KnnGraph；距离相同时索引小者优先
    """
    x = _as_numpy(events)
    if x.ndim != 2:
        raise DataError(f"knn_graph: 需要二维事件矩阵, 实际形状 {x.shape}")
    n = x.shape[0]
    if k < 1 or n <= k:
        raise DataError(f"knn_graph: 需要 n > k >= 1, 实际 n={n}, k={k}")
    if not np.isfinite(x).all():
        raise DataError("knn_graph: 事件矩阵包含非有限值")

    sq_norm = np.einsum("ij,ij->i", x, x)
    # 候选数多取几个，再用精确差值距离重排，避免展开式舍入误差影响并列判定
    n_candidates = min(n - 1, k + 4)
    block = max(1, _BLOCK_ELEMENTS // n)
    neighbors = np.empty((n, k), dtype=np.int64)

    for start in range(0, n, block):
        stop = min(n, start + block)
        rows = np.arange(start, stop)
        approx = sq_norm[rows, None] + sq_norm[None, :] - 2.0 * (x[rows] @ x.T)
        approx[np.arange(stop - start), rows] = np.inf

        candidates = np.argpartition(approx, n_candidates - 1, axis=1)[:, :n_candidates]
        diff = x[candidates] - x[rows, None, :]
        exact = np.einsum("ijk,ijk->ij", diff, diff)
        order = np.lexsort((candidates, exact), axis=1)
        ranked = np.take_along_axis(candidates, order, axis=1)
        ranked_dist = np.take_along_axis(exact, order, axis=1)
        neighbors[start:stop] = ranked[:, :k]

        # 第k个距离处存在并列且并列点可能落在候选集之外时，整行精确重算
        if n_candidates < n - 1:
            kth = ranked_dist[:, k - 1]
            boundary = ranked_dist[:, n_candidates - 1]
            for local in np.flatnonzero(boundary <= kth):
                neighbors[start + local] = _exact_row(x, start + local, k)

    src = np.repeat(np.arange(n, dtype=np.int64), k)
    return KnnGraph(n, src, neighbors.reshape(-1), k)


def _exact_row(x: np.ndarray, row: int, k: int) -> np.ndarray:
    diff = x - x[row]
    dist = np.einsum("ij,ij->i", diff, diff)
    dist[row] = np.inf
    order = np.lexsort((np.arange(x.shape[0]), dist))
    return order[:k]


def fps_count(n: int, ratio: float, min_count: int) -> int:
    """目标采样数 m = max(min_count, round(ratio * n))，并截断到 n"""
    return int(min(n, max(1, min_count, int(round(ratio * n)))))


def fps_select(events: ArrayLike, ratio: float = 0.0005, min_count: int = 16, seed: int = 0,
               count: Optional[int] = None, first_index: Optional[int] = None) -> FpsSelection:
    """
    最远点采样
    参数：
        events: (n, F) 事件矩阵
        ratio: 采样比例 r，0 < r <= 1
        min_count: 最少采样数
        seed: 随机种子，决定第一个点
        count: 显式指定采样数（覆盖 ratio/min_count）
        first_index: 显式指定第一个点
    返回值：FpsSelection，其后每个点都使到已选点集的最小距离最大
    """
    if not 0 < ratio <= 1:
        raise DataError(f"fps_select: 采样比例须在 (0, 1] 内, 实际 {ratio}")
    points = events.detach() if torch.is_tensor(events) else torch.as_tensor(np.asarray(events))
    points = points.to(torch.float64)
    n = points.shape[0]
    if n < 1:
        raise DataError("fps_select: 样本为空")

    m = min(n, max(1, count)) if count is not None else fps_count(n, ratio, min_count)
    if first_index is None:
        generator = torch.Generator().manual_seed(int(seed))
        first_index = int(torch.randint(0, n, (1,), generator=generator))
    return FpsSelection(farthest_point_indices(points, m, first_index).cpu().numpy(), ratio)


def farthest_point_indices(points: torch.Tensor, m: int, first_index: int) -> torch.Tensor:
    """
    贪心最远点采样，维护到已选点集的最小距离数组，复杂度 O(nm)
    参数：
        points: (n, F) 张量（不参与求导）
        m: 采样数
        first_index: 第一个点的索引
    返回值：(m,) long 张量
    """
    selected = torch.empty(m, dtype=torch.long)
    selected[0] = first_index
    min_dist = ((points - points[first_index]) ** 2).sum(dim=1)
    # 已选点置为-1，保证索引互不相同
    min_dist[first_index] = -1.0
    for i in range(1, m):
        idx = int(torch.argmax(min_dist))
        selected[i] = idx
        min_dist = torch.minimum(min_dist, ((points - points[idx]) ** 2).sum(dim=1))
        min_dist[idx] = -1.0
    return selected


def write_edge_list(graph: KnnGraph, path: Union[str, Path]) -> Path:
    """
    导出边列表文本文件（每行 src,dst），用于调试
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for s, d in zip(graph.src.tolist(), graph.dst.tolist()):
            f.write(f"{s},{d}\n")
    return path
