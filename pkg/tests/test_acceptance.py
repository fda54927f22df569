# -*- coding: utf-8 -*-
"""
验收测试
快速部分：几何与线性注意力的暴力对照、置换等变性、ISAB注意力规模、模型库结果表的确定性
慢速部分（-m slow）：合成数据上的端到端训练、上下文收益排序和标记物屏蔽实验
"""

from dataclasses import replace

import numpy as np
import pytest
import torch

from conftest import small_model_config
from src.architectures.attention import ISAB, Learned, MAB, relu_linear_attention
from src.architectures.gnn import gnn_layer
from src.scripts.synthetic import SynthConfig, generate_dataset, most_discriminative_markers
from src.services.evaluator import format_results_table
from src.training.trainer import TrainConfig
from src.training.trainer_manager import ExperimentManager
from src.utils.config import Config
from src.utils.geometry import KnnGraph, fps_select, knn_graph


def _brute_knn(x, k):
    edges = set()
    for i in range(len(x)):
        dist = ((x - x[i]) ** 2).sum(axis=1)
        dist[i] = np.inf
        for j in np.lexsort((np.arange(len(x)), dist))[:k]:
            edges.add((i, int(j)))
    return edges


def _brute_fps(x, m, first):
    chosen = [first]
    while len(chosen) < m:
        best, best_dist = None, -1.0
        for i in range(len(x)):
            if i in chosen:
                continue
            d = min(float(((x[i] - x[c]) ** 2).sum()) for c in chosen)
            if d > best_dist:
                best, best_dist = i, d
        chosen.append(best)
    return chosen


@pytest.mark.parametrize("instance", range(50))
def test_knn_matches_brute_force(instance):
    rng = np.random.default_rng(instance)
    n, f, k = int(rng.integers(12, 501)), int(rng.integers(1, 16)), (3, 10)[instance % 2]
    x = rng.normal(size=(n, f))
    assert set(map(tuple, knn_graph(x, k).edges.tolist())) == _brute_knn(x, k)


@pytest.mark.parametrize("instance", range(50))
def test_fps_matches_brute_force(instance):
    rng = np.random.default_rng(1000 + instance)
    n = int(rng.integers(2, 201))
    x = rng.normal(size=(n, 3))
    m = int(rng.integers(1, min(n, 20) + 1))
    first = int(rng.integers(0, n))
    selection = fps_select(x, count=m, first_index=first)
    assert selection.indices.tolist() == _brute_fps(x, m, first)


@pytest.mark.parametrize("instance", range(50))
def test_linear_attention_matches_naive(instance):
    generator = torch.Generator().manual_seed(instance)
    n, d = int(torch.randint(1, 65, (1,), generator=generator)), 4
    q, k, v = (torch.randn(n, d, generator=generator, dtype=torch.float64) for _ in range(3))
    if instance % 10 == 0:
        k = -k.abs() - 0.1
    expected = torch.zeros(n, d, dtype=torch.float64)
    for i in range(n):
        numerator = torch.zeros(d, dtype=torch.float64)
        denominator = 0.0
        for j in range(n):
            weight = float(torch.relu(q[i]) @ torch.relu(k[j]))
            numerator += weight * v[j]
            denominator += weight
        expected[i] = numerator / max(denominator, 1e-6)
    torch.testing.assert_close(relu_linear_attention(q, k, v), expected, atol=1e-5, rtol=1e-5)


def _equivariant(fn, x, perm, **kw):
    torch.testing.assert_close(fn(x[perm], **kw), fn(x)[perm], atol=1e-5, rtol=1e-5)


@pytest.mark.parametrize("instance", range(20))
def test_permutation_equivariance(instance):
    torch.manual_seed(instance)
    x = torch.randn(16, 8, dtype=torch.float64)
    perm = torch.randperm(16)
    mab = MAB(8, 2).double().eval()
    _equivariant(lambda t: mab(t, t), x, perm)
    isab = ISAB(8, 2, Learned(4)).double().eval()
    _equivariant(isab, x, perm)
    _equivariant(lambda t: relu_linear_attention(t, t.flip(1), t * 0.5), x, perm)

    graph = knn_graph(x.numpy(), 3)
    inverse = torch.argsort(perm).numpy()
    relabeled = KnnGraph(16, inverse[graph.src], inverse[graph.dst], 3)
    for kind in ("gcn", "gat", "gin"):
        layer = gnn_layer(kind, 8, 8).double().eval()
        torch.testing.assert_close(layer(x[perm], relabeled), layer(x, graph)[perm], atol=1e-5, rtol=1e-5)


def test_isab_attention_grows_linearly():
    block = ISAB(16, 4, Learned(16)).eval()
    sizes = []
    with torch.no_grad():
        for n in (10000, 20000):
            block(torch.randn(n, 16))
            sizes.append(block.last_attention_numel)
    assert sizes[1] / sizes[0] <= 2.2


def test_zoo_tables_are_reproducible(tmp_path, small_dataset, quick_train_config):
    tables = []
    for run in ("a", "b"):
        manager = ExperimentManager(small_dataset, small_model_config("mlp").to_dict(),
                                    replace(quick_train_config, epochs=1), out_dir=tmp_path / run)
        manager.zoo(["mlp", "st-fps"], seeds=[0])
        tables.append((tmp_path / run / "results_table.txt").read_bytes())
    assert tables[0] == tables[1]


def _shifted_dataset():
    synth = SynthConfig(n_events=5000, n_features=10, blast_fraction=0.01, population_shift_scale=1.0, seed=0)
    return generate_dataset(synth, 40, seed=0)


def _recipe(epochs=60):
    return TrainConfig(epochs=epochs, events_per_sample=5000, progress_bar=False)


@pytest.mark.slow
def test_end_to_end_gin_st_fps():
    dataset = _shifted_dataset()
    manager = ExperimentManager(dataset, Config.MODEL_CONFIG, _recipe())
    reports = manager.run("gin-st-fps", seeds=[0, 1, 2])
    assert sum(report.mean_f1 >= 0.85 for report in reports) >= 2


@pytest.mark.slow
def test_global_context_ordering():
    dataset = _shifted_dataset()
    summaries = ExperimentManager(dataset, Config.MODEL_CONFIG, _recipe()).zoo(["st", "mlp", "st-no-att"],
                                                                               seeds=[0, 1, 2])
    print(format_results_table(summaries))
    assert summaries["st"]["avg_f1"] - summaries["mlp"]["avg_f1"] >= 0.02
    assert summaries["mlp"]["avg_f1"] - summaries["st-no-att"]["avg_f1"] >= 0.02


@pytest.mark.slow
def test_local_context_survives_masking():
    dataset = _shifted_dataset()
    masked = most_discriminative_markers(dataset, 3)
    summaries = ExperimentManager(dataset, Config.MODEL_CONFIG, _recipe()).masked_feature_eval(
        ["gin-st-fps", "st"], masked, seeds=[0, 1, 2])
    assert summaries["gin-st-fps"]["avg_f1"] - summaries["st"]["avg_f1"] >= 0.03
