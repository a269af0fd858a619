"""Dataset types, binarisation, stratified splitting and controlled sampling."""

import numpy as np
import pytest

from shiftbench.core import (
    BinaryDataset,
    EmptyDatasetError,
    Pool,
    PoolExhaustionError,
    Sample,
    StarDataset,
    StratificationError,
    binarise_dataset,
    round_half_up,
    sample_at_prevalence,
    sample_uniform,
    split_stratified,
)


def star_dataset(stars, categories=None):
    stars = np.asarray(stars)
    x = np.arange(len(stars), dtype=float).reshape(-1, 1)
    cat = np.array(categories) if categories is not None else np.full(len(stars), "A")
    return StarDataset(x, stars, cat)


def binary_dataset(labels):
    labels = np.asarray(labels)
    return BinaryDataset(np.arange(len(labels), dtype=float).reshape(-1, 1), labels)


class TestRoundHalfUp:
    def test_halves_go_up(self):
        assert round_half_up(0.5) == 1
        assert round_half_up(1.5) == 2
        assert round_half_up(2.4) == 2
        assert round_half_up(2.6) == 3

    def test_float_grid_noise(self):
        # products of grid fractions whose true value is integral
        assert round_half_up(0.3 * 5) == 2  # true value 1.5
        assert round_half_up(2 / 3 * 2500) == 1667
        assert round_half_up(1 / 3 * 2500) == 833
        assert round_half_up(250 / 3) == 83


class TestBinarise:
    def test_integer_cut_drops_boundary(self):
        out = binarise_dataset(star_dataset([1, 2, 3, 4, 5]), 3)
        assert list(out.labels) == [0, 0, 1, 1]
        assert len(out) == 4

    def test_half_cut_keeps_everything(self):
        out = binarise_dataset(star_dataset([1, 2, 3, 4, 5]), 2.5)
        assert list(out.labels) == [0, 0, 1, 1, 1]

    def test_all_above_threshold(self):
        out = binarise_dataset(star_dataset([5, 5]), 4.5)
        assert list(out.labels) == [1, 1]

    def test_all_removed_raises(self):
        with pytest.raises(EmptyDatasetError):
            binarise_dataset(star_dataset([3, 3, 3]), 3)

    def test_size_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            stars = rng.integers(1, 6, size=50)
            cut = rng.choice([1.5, 2.5, 3, 3.5, 4.5])
            out = binarise_dataset(star_dataset(stars), cut)
            assert len(out) == 50 - int((stars == cut).sum())

    def test_category_and_features_preserved(self):
        data = star_dataset([1, 3, 5], categories=["A", "B", "B"])
        out = binarise_dataset(data, 3)
        assert list(out.category) == ["A", "B"]
        assert out.x[0, 0] == 0.0 and out.x[1, 0] == 2.0


class TestSplitStratified:
    def test_exact_divisibility(self):
        labels = np.array([1] * 40 + [0] * 60)
        first, second = split_stratified(binary_dataset(labels), 0.5, seed=1)
        assert len(first) == len(second) == 50
        assert first.n_positive == second.n_positive == 20

    def test_integer_allocation_oracle(self):
        # 101 points, 50 positives: allocation 25/26 per class by enumeration
        labels = np.array([1] * 50 + [0] * 51)
        first, second = split_stratified(binary_dataset(labels), 0.5, seed=7)
        target = 50 / 101
        assert first.n_positive == 25 and second.n_positive == 25
        assert {len(first), len(second)} == {50, 51}
        for pool in (first, second):
            assert abs(pool.prevalence - target) <= 1 / 50

    def test_deterministic(self):
        labels = (np.random.default_rng(3).random(80) < 0.5).astype(int)
        data = binary_dataset(labels)
        a1, b1 = split_stratified(data, 0.3, seed=42)
        a2, b2 = split_stratified(data, 0.3, seed=42)
        assert np.array_equal(a1.dataset.x, a2.dataset.x)
        assert np.array_equal(b1.dataset.x, b2.dataset.x)

    def test_disjoint_and_exhaustive(self):
        labels = (np.random.default_rng(4).random(77) < 0.4).astype(int)
        a, b = split_stratified(binary_dataset(labels), 0.5, seed=0)
        ids = np.concatenate([a.dataset.x[:, 0], b.dataset.x[:, 0]])
        assert len(a) + len(b) == 77
        assert len(np.unique(ids)) == 77

    def test_tiny_class_raises(self):
        with pytest.raises(StratificationError):
            split_stratified(binary_dataset([0, 0, 0, 1]), 0.5, seed=0)


class TestSampleAtPrevalence:
    def make_pool(self, n_pos=300, n_neg=300):
        return Pool(binary_dataset([1] * n_pos + [0] * n_neg))

    def test_boundary_prevalences(self):
        pool = self.make_pool(500, 500)
        s = sample_at_prevalence(pool, 0.0, 500, seed=0)
        assert s.labels.sum() == 0 and len(s) == 500
        s = sample_at_prevalence(pool, 0.5, 500, seed=0)
        assert s.labels.sum() == 250

    def test_deterministic_members(self):
        pool = self.make_pool()
        s1 = sample_at_prevalence(pool, 0.25, 200, seed=99)
        s2 = sample_at_prevalence(pool, 0.25, 200, seed=99)
        assert np.array_equal(s1.x, s2.x)
        assert np.array_equal(s1.labels, s2.labels)

    def test_prevalence_within_half_over_size(self):
        pool = self.make_pool()
        rng = np.random.default_rng(0)
        for _ in range(50):
            p, n = rng.random(), int(rng.integers(1, 250))
            if round_half_up(p * n) > 300 or n - round_half_up(p * n) > 300:
                continue
            s = sample_at_prevalence(pool, p, n, seed=int(rng.integers(1 << 30)))
            assert abs(s.true_prevalence - p) <= 0.5 / n + 1e-12

    def test_exhaustion_names_class(self):
        pool = self.make_pool(5, 300)
        with pytest.raises(PoolExhaustionError, match="positive"):
            sample_at_prevalence(pool, 0.9, 100, seed=0)
        with pytest.raises(PoolExhaustionError, match="negative"):
            sample_at_prevalence(Pool(binary_dataset([1] * 50 + [0] * 2)), 0.1, 40, seed=0)


class TestSampleUniform:
    def test_whole_pool(self):
        pool = Pool(binary_dataset([1] * 30 + [0] * 70))
        s = sample_uniform(pool, 100, seed=0)
        assert s.true_prevalence == pool.prevalence

    def test_single_from_positive_pool(self):
        pool = Pool(binary_dataset([1, 1, 1]))
        assert sample_uniform(pool, 1, seed=5).true_prevalence == 1.0

    def test_mean_prevalence_within_three_standard_errors(self):
        pool = Pool(binary_dataset([1] * 350 + [0] * 650))
        p0, size, draws = 0.35, 40, 1000
        means = [
            sample_uniform(pool, size, seed=i).true_prevalence for i in range(draws)
        ]
        # hypergeometric draw variance, averaged over independent draws
        var = p0 * (1 - p0) / size * (1000 - size) / (1000 - 1)
        se = np.sqrt(var / draws)
        assert abs(np.mean(means) - p0) <= 3 * se

    def test_oversized_request_raises(self):
        with pytest.raises(PoolExhaustionError):
            sample_uniform(Pool(binary_dataset([0, 1])), 3, seed=0)


class TestSampleInvariants:
    def test_true_prevalence_recomputes_exactly(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            labels = (rng.random(rng.integers(1, 60)) < rng.random()).astype(int)
            s = Sample(np.zeros((len(labels), 1)), labels)
            assert s.true_prevalence == labels.sum() / len(labels)

    def test_empty_sample_rejected(self):
        with pytest.raises(EmptyDatasetError):
            Sample(np.zeros((0, 1)), np.array([], dtype=int))

    def test_label_validation(self):
        with pytest.raises(ValueError):
            binary_dataset([0, 1, 2])
        with pytest.raises(ValueError):
            star_dataset([0, 3])
