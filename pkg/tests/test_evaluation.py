"""ROC/AUC vs pairwise brute force, overlap metric, error fits, embedding export."""

import csv
import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_auc, small_descriptor
from reconad.errors import ContractError, UndefinedMetricError
from reconad.evaluation import (
    ErrorDistributions,
    error_distributions,
    export_latents,
    overlap_metric,
    roc_auc,
    write_embedding_csv,
    write_histogram_csv,
    write_roc_csv,
)
from reconad.models import Checkpoint, Hyperparameters, build_models


class TestRocAuc:
    def test_perfect_separation(self):
        scores = np.array([5.0, 4.0, 3.0, 1.0, 0.5, 0.2])
        labels = np.array([1, 1, 1, 0, 0, 0])
        assert roc_auc(scores, labels).auc == 1.0

    def test_perfect_inversion(self):
        scores = np.array([1.0, 2.0, 3.0, 4.0])
        labels = np.array([0, 0, 1, 1])
        assert roc_auc(-scores, labels).auc == 0.0

    def test_all_tied_scores_half(self):
        scores = np.ones(10)
        labels = np.array([1, 0] * 5)
        assert roc_auc(scores, labels).auc == 0.5

    def test_random_labels_near_half(self):
        """Labels independent of scores: AUC within 3 standard errors of 0.5."""
        rng = np.random.default_rng(0)
        n = 2000
        scores = rng.normal(size=n)
        labels = rng.integers(0, 2, size=n)
        p, q = int(labels.sum()), int(n - labels.sum())
        se = np.sqrt((p + q + 1) / (12.0 * p * q))
        assert abs(roc_auc(scores, labels).auc - 0.5) < 3 * se

    def test_brute_force_oracle_exact(self):
        """Fast AUC equals the O(n^2) pair count bitwise on 200 instances."""
        rng = np.random.default_rng(1)
        for trial in range(200):
            n = int(rng.integers(2, 1001))
            labels = rng.integers(0, 2, size=n)
            if labels.all() or not labels.any():
                labels[0] = 1 - labels[0]
            if trial % 2:  # heavy ties half the time
                scores = rng.integers(0, 10, size=n).astype(float)
            else:
                scores = rng.normal(size=n)
            assert roc_auc(scores, labels).auc == brute_force_auc(scores, labels)

    def test_monotone_transform_invariance_exact(self):
        """Strictly increasing transforms leave the AUC bitwise unchanged."""
        rng = np.random.default_rng(2)
        transforms = [
            lambda s: 2.0 * s + 5.0,
            lambda s: s**3,
            lambda s: np.exp(s / 8.0),
        ]
        for trial in range(100):
            n = int(rng.integers(2, 400))
            # quarter-integer scores: the transforms cannot collapse ties
            scores = rng.integers(0, 100, size=n) / 4.0
            labels = rng.integers(0, 2, size=n)
            if labels.all() or not labels.any():
                labels[0] = 1 - labels[0]
            baseline = roc_auc(scores, labels).auc
            transform = transforms[trial % len(transforms)]
            assert roc_auc(transform(scores), labels).auc == baseline

    def test_score_negation_complements(self):
        """AUC(s) + AUC(-s) = 1 for tie-free scores."""
        rng = np.random.default_rng(3)
        scores = rng.permutation(np.arange(50, dtype=float))
        labels = rng.integers(0, 2, size=50)
        labels[0] = 1
        labels[1] = 0
        forward = roc_auc(scores, labels).auc
        backward = roc_auc(-scores, labels).auc
        assert forward + backward == 1.0

    def test_curve_geometry(self):
        rng = np.random.default_rng(4)
        scores = rng.normal(size=300)
        labels = rng.integers(0, 2, size=300)
        labels[:2] = [0, 1]
        roc = roc_auc(scores, labels)
        assert roc.fpr[0] == 0.0 and roc.tpr[0] == 0.0
        assert roc.fpr[-1] == 1.0 and roc.tpr[-1] == 1.0
        assert np.all(np.diff(roc.fpr) >= 0)
        assert np.all(np.diff(roc.tpr) >= 0)
        assert np.all(np.diff(roc.thresholds) < 0)
        assert 0.0 <= roc.auc <= 1.0

    def test_auc_is_trapezoid_area(self):
        rng = np.random.default_rng(5)
        scores = rng.normal(size=500)
        labels = rng.integers(0, 2, size=500)
        labels[:2] = [0, 1]
        roc = roc_auc(scores, labels)
        assert roc.auc == pytest.approx(np.trapezoid(roc.tpr, roc.fpr), abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(
        seed=st.integers(0, 10_000),
        n=st.integers(2, 200),
        ties=st.booleans(),
    )
    def test_brute_force_property(self, seed, n, ties):
        rng = np.random.default_rng(seed)
        scores = (
            rng.integers(0, 5, size=n).astype(float) if ties else rng.normal(size=n)
        )
        labels = rng.integers(0, 2, size=n)
        if labels.all() or not labels.any():
            labels[0] = 1 - labels[0]
        assert roc_auc(scores, labels).auc == brute_force_auc(scores, labels)

    def test_single_class_rejected(self):
        with pytest.raises(UndefinedMetricError):
            roc_auc(np.arange(4.0), np.ones(4))
        with pytest.raises(UndefinedMetricError):
            roc_auc(np.arange(4.0), np.zeros(4))

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            roc_auc(np.arange(4.0), np.ones(3))

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        scores = rng.normal(size=40)
        labels = rng.integers(0, 2, size=40)
        labels[:2] = [0, 1]
        roc = roc_auc(scores, labels)
        path = tmp_path / "roc.csv"
        write_roc_csv(roc, path)
        with open(path, newline="") as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == len(roc.fpr)
        np.testing.assert_array_equal([float(r["fpr"]) for r in rows], roc.fpr)
        np.testing.assert_array_equal([float(r["tpr"]) for r in rows], roc.tpr)


class TestOverlapMetric:
    def test_disjoint_samples_zero(self):
        healthy = np.linspace(0, 1, 100)
        anomalous = np.linspace(2, 3, 100)
        assert overlap_metric(healthy, anomalous) == 0.0

    def test_identical_distribution_near_95(self):
        """Same distribution on both sides: ~95% falls inside the interval."""
        rng = np.random.default_rng(7)
        healthy = rng.normal(0, 1, size=10_000)
        anomalous = rng.normal(0, 1, size=10_000)
        assert overlap_metric(healthy, anomalous) == pytest.approx(95.0, abs=1.5)

    def test_gaussian_variant_on_normal_data(self):
        rng = np.random.default_rng(8)
        healthy = rng.normal(5, 2, size=10_000)
        anomalous = rng.normal(5, 2, size=10_000)
        value = overlap_metric(healthy, anomalous, method="gaussian")
        assert value == pytest.approx(95.0, abs=1.5)

    def test_weakly_decreasing_under_upward_shift(self):
        rng = np.random.default_rng(9)
        healthy = rng.normal(0, 1, size=5_000)
        anomalous = rng.normal(0.5, 1, size=5_000)
        values = [
            overlap_metric(healthy, anomalous + shift)
            for shift in (0.0, 0.5, 1.0, 2.0, 4.0)
        ]
        assert all(b <= a for a, b in zip(values, values[1:]))

    def test_bounds(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            healthy = rng.normal(size=50)
            anomalous = rng.normal(rng.uniform(-3, 3), 1, size=50)
            value = overlap_metric(healthy, anomalous)
            assert 0.0 <= value <= 100.0

    def test_empty_rejected(self):
        with pytest.raises(UndefinedMetricError):
            overlap_metric([], [1.0])
        with pytest.raises(UndefinedMetricError):
            overlap_metric([1.0], [])

    def test_unknown_method_rejected(self):
        with pytest.raises(ContractError):
            overlap_metric([1.0, 2.0], [1.5], method="bootstrap")


class TestErrorDistributions:
    def _residuals_and_masks(self, healthy, anomalous):
        residuals = np.concatenate([healthy, anomalous]).reshape(1, -1)
        masks = np.concatenate(
            [np.zeros(len(healthy), dtype=np.uint8), np.ones(len(anomalous), dtype=np.uint8)]
        ).reshape(1, -1)
        return residuals, masks

    def test_constant_partition(self):
        residuals, masks = self._residuals_and_masks(
            np.full(50, 0.25), np.full(30, 2.0)
        )
        dists = error_distributions(residuals, masks)
        assert dists.mu_h == 0.25 and dists.sigma_h == 0.0
        assert dists.mu_a == 2.0 and dists.sigma_a == 0.0

    def test_sampling_oracle_recovers_parameters(self):
        """Fits on Normal(2.405, 1.152^2) samples land within 3 standard errors."""
        rng = np.random.default_rng(11)
        n = 10_000
        mu_a, sigma_a = 2.405, 1.152
        mu_h, sigma_h = 0.424, 0.521
        healthy = rng.normal(mu_h, sigma_h, size=n)
        anomalous = rng.normal(mu_a, sigma_a, size=n)
        residuals, masks = self._residuals_and_masks(healthy, anomalous)
        dists = error_distributions(residuals, masks)
        assert abs(dists.mu_a - mu_a) < 3 * sigma_a / np.sqrt(n)
        assert abs(dists.sigma_a - sigma_a) < 3 * sigma_a / np.sqrt(2 * n)
        assert abs(dists.mu_h - mu_h) < 3 * sigma_h / np.sqrt(n)
        assert abs(dists.sigma_h - sigma_h) < 3 * sigma_h / np.sqrt(2 * n)

    def test_histogram_unit_integral(self):
        rng = np.random.default_rng(12)
        residuals, masks = self._residuals_and_masks(
            rng.exponential(1.0, size=4000), rng.normal(3, 1, size=1000)
        )
        dists = error_distributions(residuals, masks)
        for hist in dists.histograms.values():
            widths = np.diff(hist["edges"])
            assert np.sum(hist["density"] * widths) == pytest.approx(1.0, abs=1e-6)

    def test_partition_sizes(self):
        rng = np.random.default_rng(13)
        residuals = np.abs(rng.normal(size=(4, 8, 8)))
        masks = np.zeros_like(residuals, dtype=np.uint8)
        masks[:, 3:5, 3:5] = 1
        dists = error_distributions(residuals, masks)
        assert dists.anomalous_errors.size == 4 * 4
        assert dists.healthy_errors.size == 4 * 64 - 4 * 4

    def test_metrics_keys(self):
        residuals, masks = self._residuals_and_masks(np.ones(10), np.ones(5) * 2)
        metrics = error_distributions(residuals, masks).metrics()
        assert set(metrics) == {"mu_h", "sigma_h", "mu_a", "sigma_a", "overlap_percent"}

    def test_empty_partition_rejected(self):
        residuals = np.ones((1, 4))
        with pytest.raises(UndefinedMetricError):
            error_distributions(residuals, np.ones((1, 4), dtype=np.uint8))
        with pytest.raises(UndefinedMetricError):
            error_distributions(residuals, np.zeros((1, 4), dtype=np.uint8))

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            error_distributions(np.ones((1, 4)), np.zeros((1, 5), dtype=np.uint8))

    def test_histogram_csv(self, tmp_path):
        rng = np.random.default_rng(14)
        residuals, masks = self._residuals_and_masks(
            rng.normal(1, 0.3, size=500), rng.normal(2, 0.4, size=200)
        )
        dists = error_distributions(residuals, masks, bins=20)
        path = tmp_path / "hist.csv"
        write_histogram_csv(dists, path)
        with open(path, newline="") as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == 40  # 20 bins x 2 partitions
        assert {row["partition"] for row in rows} == {"healthy", "anomalous"}


class TestExportLatents:
    def _checkpoint(self, seed=0):
        torch.manual_seed(seed)
        descriptor = small_descriptor()
        encoder, decoder, critic = build_models("aae", descriptor)
        encoder.eval(), decoder.eval()
        return Checkpoint("aae", descriptor, Hyperparameters(), encoder, decoder, critic)

    def _images(self, n, seed):
        rng = np.random.default_rng(seed)
        return rng.normal(0, 1, size=(n, 8, 8)).astype(np.float32)

    def test_row_counts_and_labels(self):
        checkpoint = self._checkpoint()
        embedding = export_latents(
            checkpoint, self._images(10, 1), self._images(6, 2),
            prior_sample_count=8, seed=0, iterations=250,
        )
        assert len(embedding.labels) == 24
        assert embedding.latents.shape == (24, 3)
        assert embedding.embedding.shape == (24, 2)
        assert embedding.labels[:10] == ["healthy"] * 10
        assert embedding.labels[10:16] == ["anomalous"] * 6
        assert embedding.labels[16:] == ["prior"] * 8

    def test_deterministic_per_seed(self):
        checkpoint = self._checkpoint()
        kwargs = dict(prior_sample_count=5, seed=3, iterations=250)
        a = export_latents(checkpoint, self._images(8, 3), self._images(4, 4), **kwargs)
        b = export_latents(checkpoint, self._images(8, 3), self._images(4, 4), **kwargs)
        np.testing.assert_array_equal(a.embedding, b.embedding)
        np.testing.assert_array_equal(a.latents, b.latents)

    def test_too_few_points_rejected(self):
        checkpoint = self._checkpoint()
        with pytest.raises(ContractError):
            export_latents(checkpoint, self._images(1, 5), self._images(1, 6),
                           prior_sample_count=1)

    def test_embedding_csv(self, tmp_path):
        checkpoint = self._checkpoint()
        embedding = export_latents(
            checkpoint, self._images(5, 7), self._images(3, 8),
            prior_sample_count=4, seed=0, iterations=250,
        )
        path = tmp_path / "embedding.csv"
        write_embedding_csv(embedding, path, include_latents=True)
        with open(path, newline="") as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == 12
        assert [row["label"] for row in rows] == embedding.labels
        assert float(rows[0]["x"]) == embedding.embedding[0, 0]
        assert float(rows[0]["z0"]) == embedding.latents[0, 0]
