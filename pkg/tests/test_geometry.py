# -*- coding: utf-8 -*-
"""
k-NN图与最远点采样测试
"""

import numpy as np
import pytest
import torch

from src.utils.errors import DataError
from src.utils.geometry import KnnGraph, fps_count, fps_select, knn_graph, write_edge_list


def _brute_force_neighbors(x, k):
    dist = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(dist, np.inf)
    return np.stack([np.lexsort((np.arange(len(x)), row))[:k] for row in dist])


class TestKnnGraph:
    def test_colinear_points(self):
        graph = knn_graph(np.array([[0.0], [1.0], [3.0]]), k=1)
        assert sorted(map(tuple, graph.edges.tolist())) == [(0, 1), (1, 0), (2, 1)]

    def test_out_degree_and_no_self_loops(self, rng):
        graph = knn_graph(rng.normal(size=(40, 5)), k=6)
        assert graph.n_edges == 40 * 6
        np.testing.assert_array_equal(np.bincount(graph.src, minlength=40), np.full(40, 6))
        assert not np.any(graph.src == graph.dst)

    def test_matches_brute_force(self, rng):
        x = rng.normal(size=(120, 7))
        graph = knn_graph(x, k=5)
        np.testing.assert_array_equal(graph.dst.reshape(120, 5), _brute_force_neighbors(x, 5))

    def test_duplicate_points_break_ties_by_index(self):
        x = np.array([[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [5.0, 5.0]])
        graph = knn_graph(x, k=2)
        neighbors = graph.dst.reshape(4, 2)
        np.testing.assert_array_equal(neighbors[0], [1, 2])
        np.testing.assert_array_equal(neighbors[1], [0, 2])
        np.testing.assert_array_equal(neighbors[2], [0, 1])

    def test_many_ties_beyond_candidates(self):
        x = np.zeros((20, 2))
        graph = knn_graph(x, k=3)
        np.testing.assert_array_equal(graph.dst.reshape(20, 3)[10], [0, 1, 2])

    def test_accepts_tensor(self):
        graph = knn_graph(torch.tensor([[0.0], [1.0], [3.0]]), k=1)
        assert graph.n_nodes == 3

    @pytest.mark.parametrize("n, k", [(3, 3), (5, 0), (1, 1)])
    def test_invalid_k(self, n, k):
        with pytest.raises(DataError):
            knn_graph(np.zeros((n, 2)), k)

    def test_non_finite_rejected(self):
        with pytest.raises(DataError):
            knn_graph(np.array([[0.0], [np.nan], [1.0]]), 1)

    def test_edge_index_layout(self):
        graph = KnnGraph.from_edges(3, [[0, 1], [2, 0]])
        torch.testing.assert_close(graph.to_edge_index(), torch.tensor([[0, 2], [1, 0]]))

    def test_from_edges_out_of_range(self):
        with pytest.raises(DataError):
            KnnGraph.from_edges(2, [[0, 5]])

    def test_write_edge_list(self, tmp_path):
        path = write_edge_list(knn_graph(np.array([[0.0], [1.0], [3.0]]), 1), tmp_path / "edges.txt")
        assert path.read_text().splitlines() == ["0,1", "1,0", "2,1"]


class TestFps:
    def test_farthest_first(self):
        selection = fps_select(np.array([[0.0], [1.0], [2.0], [10.0]]), count=3, first_index=0)
        np.testing.assert_array_equal(selection.indices, [0, 3, 2])

    def test_full_ratio_is_permutation(self, rng):
        selection = fps_select(rng.normal(size=(25, 3)), ratio=1.0, min_count=1, seed=2)
        np.testing.assert_array_equal(np.sort(selection.indices), np.arange(25))

    def test_count_rule(self):
        assert fps_count(10000, 0.0005, 16) == 16
        assert fps_count(100000, 0.0005, 16) == 50
        assert fps_count(5, 0.0005, 16) == 5

    def test_seed_determines_first_point(self, rng):
        x = rng.normal(size=(30, 2))
        a = fps_select(x, ratio=0.2, min_count=1, seed=7)
        b = fps_select(x, ratio=0.2, min_count=1, seed=7)
        np.testing.assert_array_equal(a.indices, b.indices)
        assert len(a.indices) == 6

    def test_greedy_max_min_distance(self, rng):
        x = rng.normal(size=(50, 4))
        indices = fps_select(x, count=8, first_index=0).indices
        for i in range(1, len(indices)):
            chosen = x[indices[:i]]
            dist = ((x[:, None, :] - chosen[None]) ** 2).sum(-1).min(axis=1)
            assert dist[indices[i]] == pytest.approx(dist.max())

    def test_duplicates_stay_distinct(self):
        selection = fps_select(np.zeros((5, 2)), count=5, first_index=0)
        assert len(set(selection.indices.tolist())) == 5

    def test_invalid_ratio(self):
        with pytest.raises(DataError):
            fps_select(np.zeros((3, 1)), ratio=0.0)
