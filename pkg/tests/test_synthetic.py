# -*- coding: utf-8 -*-
"""
合成数据生成测试
"""

import numpy as np
import pytest

from src.scripts.dataset_loader import build_dataset
from src.scripts.synthetic import (SynthConfig, generate_dataset, generate_sample, most_discriminative_markers,
                                   population_structure, write_synthetic_dataset)
from src.utils.errors import DataError


class TestBlastCount:
    def test_one_percent_of_thousand(self):
        sample = generate_sample(SynthConfig(n_events=1000, blast_fraction=0.01, seed=1), sample_seed=5)
        assert int(sample.labels.sum()) == 10
        assert sample.events.shape == (1000, 10)

    def test_minimum_one_blast(self):
        config = SynthConfig(n_events=5000, blast_fraction=0.0001)
        assert config.blast_count() == 1

    @pytest.mark.parametrize("fraction", [0.0, 0.6])
    def test_fraction_out_of_range(self, fraction):
        with pytest.raises(DataError):
            SynthConfig(blast_fraction=fraction)


class TestDeterminism:
    def test_same_seed_same_sample(self):
        config = SynthConfig(n_events=200, n_features=4, seed=3)
        a = generate_sample(config, sample_seed=11)
        b = generate_sample(config, sample_seed=11)
        np.testing.assert_array_equal(a.events, b.events)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_different_sample_seed_differs(self):
        config = SynthConfig(n_events=200, n_features=4, seed=3)
        assert not np.array_equal(generate_sample(config, 1).events, generate_sample(config, 2).events)

    def test_structure_shared_across_samples(self):
        config = SynthConfig(n_events=200, n_features=4, seed=3)
        a, b = generate_sample(config, 1), generate_sample(config, 2)
        shift = np.asarray(a.metadata["shift"]) - np.asarray(b.metadata["shift"])
        np.testing.assert_allclose(np.asarray(a.metadata["blast_mean"]) - np.asarray(b.metadata["blast_mean"]), shift)

    def test_dataset_seed_keeps_base_layout(self):
        config = SynthConfig(n_events=100, n_features=4, seed=3)
        first = generate_dataset(config, 4, seed=1).sample("sample_000")
        second = generate_dataset(config, 4, seed=2).sample("sample_000")
        assert first.metadata["blast_parent"] == second.metadata["blast_parent"]
        unshifted = [np.asarray(s.metadata["blast_mean"]) - np.asarray(s.metadata["shift"]) for s in (first, second)]
        np.testing.assert_allclose(unshifted[0], unshifted[1])
        assert not np.allclose(first.metadata["blast_mean"], second.metadata["blast_mean"])

    def test_zero_shift_scale(self):
        sample = generate_sample(SynthConfig(n_events=100, population_shift_scale=0.0), 4)
        np.testing.assert_array_equal(sample.metadata["shift"], np.zeros(10))


def test_blasts_close_to_parent_cluster():
    config = SynthConfig(n_features=6, seed=2)
    structure = population_structure(config)
    parent = int(structure["blast_parent"])
    offset = np.abs(structure["blast_mean"] - structure["healthy_means"][parent]) / structure["healthy_sigmas"][parent]
    axes = structure["discriminative_axes"]
    assert len(axes) == 3
    assert np.all((offset[axes] >= 2.0 - 1e-9) & (offset[axes] <= 4.0 + 1e-9))
    others = np.setdiff1d(np.arange(6), axes)
    np.testing.assert_allclose(offset[others], 1.0)


def test_dataset_split_sizes():
    dataset = generate_dataset(SynthConfig(n_events=50, n_features=3), 40, seed=0)
    assert dataset.split_sizes() == {"train": 20, "val": 10, "test": 10}


def test_dataset_needs_four_samples():
    with pytest.raises(DataError):
        generate_dataset(SynthConfig(n_events=50), 3)


def test_written_dataset_reloads_with_same_split(tmp_path, small_dataset, small_synth_config):
    manifest = write_synthetic_dataset(small_dataset, tmp_path, small_synth_config)
    reloaded = build_dataset(manifest, seed=123)
    assert reloaded.split == small_dataset.split
    sample_id = small_dataset.sample_ids[0]
    np.testing.assert_allclose(reloaded.sample(sample_id).events, small_dataset.sample(sample_id).events)
    np.testing.assert_array_equal(reloaded.sample(sample_id).labels, small_dataset.sample(sample_id).labels)


def test_discriminative_markers_are_ranked(small_dataset):
    ranked = most_discriminative_markers(small_dataset, len(small_dataset.canonical_markers))
    assert sorted(ranked) == sorted(small_dataset.canonical_markers)
    assert most_discriminative_markers(small_dataset, 2) == ranked[:2]
