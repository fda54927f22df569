# -*- coding: utf-8 -*-
"""
图神经网络层测试
"""

import numpy as np
import pytest
import torch

from src.architectures.gnn import GATLayer, GCNLayer, GINLayer, gnn_layer
from src.utils.errors import ShapeError
from src.utils.geometry import KnnGraph, knn_graph


def _path_graph():
    return KnnGraph.from_edges(3, [[0, 1], [1, 0], [1, 2], [2, 1]])


def _relabel(graph, perm):
    inverse = torch.argsort(perm).numpy()
    return KnnGraph(graph.n_nodes, inverse[graph.src], inverse[graph.dst], graph.k)


def test_gcn_matches_dense_formula():
    layer = GCNLayer(2, 3)
    x = torch.randn(3, 2)
    adjacency = torch.tensor([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]])
    inv_sqrt = torch.diag(adjacency.sum(dim=1).pow(-0.5))
    expected = inv_sqrt @ adjacency @ inv_sqrt @ layer.linear(x) + layer.bias
    torch.testing.assert_close(layer(x, _path_graph()), expected)


def test_gat_attention_sums_to_one_per_receiver():
    layer = GATLayer(4, 6).eval()
    graph = knn_graph(np.random.default_rng(0).normal(size=(10, 3)), 3)
    _, (receiver, _, alpha) = layer(torch.randn(10, 4), graph, return_attention=True)
    sums = torch.zeros(10).index_add_(0, receiver, alpha)
    torch.testing.assert_close(sums, torch.ones(10))


def test_gat_isolated_node_attends_to_itself():
    layer = GATLayer(2, 2).eval()
    x = torch.randn(2, 2)
    out = layer(x, KnnGraph.empty(2))
    torch.testing.assert_close(out, layer.linear(x) + layer.bias)


def test_gin_on_empty_graph_is_row_mlp():
    layer = GINLayer(3, 4)
    x = torch.randn(5, 3)
    torch.testing.assert_close(layer(x, KnnGraph.empty(5)), layer.mlp(x))


def test_gin_sums_neighbors():
    layer = GINLayer(1, 1)
    with torch.no_grad():
        layer.eps.fill_(0.5)
    x = torch.tensor([[1.0], [2.0], [4.0]])
    expected = layer.mlp(torch.tensor([[1.5 + 2.0], [3.0 + 1.0 + 4.0], [6.0 + 2.0]]))
    torch.testing.assert_close(layer(x, _path_graph()), expected)


@pytest.mark.parametrize("kind", ["gcn", "gat", "gin"])
def test_permutation_equivariance(kind):
    layer = gnn_layer(kind, 4, 5).eval()
    x = torch.randn(12, 4)
    graph = knn_graph(x, 3)
    perm = torch.randperm(12)
    out = layer(x, graph)
    torch.testing.assert_close(layer(x[perm], _relabel(graph, perm)), out[perm], atol=1e-5, rtol=1e-5)


def test_edge_tensor_input():
    layer = GCNLayer(2, 2)
    x = torch.randn(3, 2)
    torch.testing.assert_close(layer(x, _path_graph().to_edge_index()), layer(x, _path_graph()))


def test_node_count_mismatch():
    with pytest.raises(ShapeError):
        GCNLayer(2, 2)(torch.randn(4, 2), _path_graph())


def test_unknown_kind():
    with pytest.raises(ValueError):
        gnn_layer("sage", 2, 2)
