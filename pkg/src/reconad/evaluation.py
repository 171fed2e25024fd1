"""Quantitative evaluation: pixel-pooled ROC/AUC, error distributions,
overlap percentage, and latent-embedding export.

The ROC curve is built over all distinct score thresholds with tied
scores grouped, and the trapezoidal area is accumulated in integer
counts. That makes the AUC *identical* (not merely close) to the
Mann-Whitney statistic — the probability that a random anomalous pixel
outscores a random healthy one, ties counted half.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ContractError, UndefinedMetricError
from .models import Checkpoint, LatentDistribution


@dataclass
class RocResult:
    """A ROC curve (descending thresholds, (0,0) to (1,1)) and its AUC."""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def roc_auc(scores, labels) -> RocResult:
    """Pixel-pooled ROC over all distinct thresholds; AUC by trapezoid.

    Requires at least one positive and one negative label. The returned
    curve starts at (0, 0) with threshold +inf and ends at (1, 1).
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ContractError(f"scores ({scores.shape}) and labels ({labels.shape}) differ")
    labels = labels.astype(bool)
    positives = int(labels.sum())
    negatives = int(labels.size - positives)
    if positives == 0 or negatives == 0:
        raise UndefinedMetricError("ROC needs both positive and negative labels")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    last_of_group = np.r_[np.diff(sorted_scores) != 0, True]
    tp = np.cumsum(sorted_labels, dtype=np.int64)[last_of_group]
    fp = np.cumsum(~sorted_labels, dtype=np.int64)[last_of_group]
    tp = np.concatenate(([0], tp))
    fp = np.concatenate(([0], fp))
    thresholds = np.concatenate(([np.inf], sorted_scores[last_of_group]))

    # Integer trapezoid: sum dFP * (TP_i + TP_{i+1}); dividing by 2*P*N at
    # the end keeps the value bit-identical to the pairwise count.
    area2 = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    auc = area2 / (2 * positives * negatives)
    return RocResult(
        thresholds=thresholds,
        fpr=fp / negatives,
        tpr=tp / positives,
        auc=auc,
    )


def write_roc_csv(roc: RocResult, path):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["fpr", "tpr", "threshold"])
        for fpr, tpr, threshold in zip(roc.fpr, roc.tpr, roc.thresholds):
            writer.writerow([repr(float(fpr)), repr(float(tpr)), repr(float(threshold))])


# ---------------------------------------------------------------------------
# Error distributions and overlap
# ---------------------------------------------------------------------------


@dataclass
class ErrorDistributions:
    """Residual samples split by ground truth, with Gaussian fits.

    ``mu_h``/``sigma_h`` describe healthy-pixel errors, ``mu_a``/``sigma_a``
    anomalous-pixel errors; histograms are normalized to unit integral.
    """

    healthy_errors: np.ndarray
    anomalous_errors: np.ndarray
    mu_h: float
    sigma_h: float
    mu_a: float
    sigma_a: float
    overlap_percent: float
    histograms: dict = field(default_factory=dict)

    def metrics(self) -> dict:
        return {
            "mu_h": self.mu_h,
            "sigma_h": self.sigma_h,
            "mu_a": self.mu_a,
            "sigma_a": self.sigma_a,
            "overlap_percent": self.overlap_percent,
        }


def overlap_metric(healthy_errors, anomalous_errors, method: str = "percentile") -> float:
    """Percent of anomalous errors inside the healthy 95% interval.

    ``method='percentile'`` uses the empirical [2.5, 97.5] percentile range
    of the healthy errors (distribution-free, default); ``'gaussian'``
    uses the Gaussian fit's mean +/- 1.96 sigma for comparison.
    """
    healthy = np.asarray(healthy_errors, dtype=np.float64).ravel()
    anomalous = np.asarray(anomalous_errors, dtype=np.float64).ravel()
    if healthy.size == 0 or anomalous.size == 0:
        raise UndefinedMetricError("overlap metric needs non-empty samples on both sides")
    if method == "percentile":
        lo, hi = np.percentile(healthy, [2.5, 97.5])
    elif method == "gaussian":
        mu, sigma = healthy.mean(), healthy.std()
        lo, hi = mu - 1.96 * sigma, mu + 1.96 * sigma
    else:
        raise ContractError(f"unknown overlap method {method!r}")
    inside = np.count_nonzero((anomalous >= lo) & (anomalous <= hi))
    return 100.0 * inside / anomalous.size


def error_distributions(residuals, masks, bins: int = 100,
                        overlap_method: str = "percentile") -> ErrorDistributions:
    """Partition pixel residuals by mask and fit Gaussians to each side."""
    residuals = np.asarray(residuals, dtype=np.float64)
    masks = np.asarray(masks)
    if residuals.shape != masks.shape:
        raise ContractError(f"residuals {residuals.shape} and masks {masks.shape} differ")
    anomalous = residuals[masks != 0]
    healthy = residuals[masks == 0]
    if healthy.size == 0 or anomalous.size == 0:
        raise UndefinedMetricError("both mask partitions must be non-empty")
    histograms = {}
    for name, sample in (("healthy", healthy), ("anomalous", anomalous)):
        density, edges = np.histogram(sample, bins=bins, density=True)
        histograms[name] = {"edges": edges, "density": density}
    return ErrorDistributions(
        healthy_errors=healthy,
        anomalous_errors=anomalous,
        mu_h=float(healthy.mean()),
        sigma_h=float(healthy.std()),
        mu_a=float(anomalous.mean()),
        sigma_a=float(anomalous.std()),
        overlap_percent=overlap_metric(healthy, anomalous, method=overlap_method),
        histograms=histograms,
    )


def write_histogram_csv(dists: ErrorDistributions, path):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["partition", "bin_left", "bin_right", "density"])
        for name, hist in dists.histograms.items():
            edges, density = hist["edges"], hist["density"]
            for left, right, value in zip(edges[:-1], edges[1:], density):
                writer.writerow([name, repr(float(left)), repr(float(right)),
                                 repr(float(value))])


# ---------------------------------------------------------------------------
# Latent embedding export
# ---------------------------------------------------------------------------


@dataclass
class LatentEmbedding:
    """Labeled latent codes plus their 2-D neighbor-embedding projection."""

    labels: list
    latents: np.ndarray
    embedding: np.ndarray


def _encode_codes(checkpoint: Checkpoint, images: np.ndarray) -> np.ndarray:
    checkpoint.encoder.eval()
    codes = []
    with torch.no_grad():
        for begin in range(0, len(images), 256):
            batch = torch.from_numpy(
                np.asarray(images[begin : begin + 256], dtype=np.float32)
            )
            out = checkpoint.encoder(batch)
            if isinstance(out, LatentDistribution):
                out = out.mean
            codes.append(out.numpy())
    return np.concatenate(codes, axis=0)


def export_latents(checkpoint: Checkpoint, healthy_images, anomalous_images,
                   prior_sample_count: int, seed: int = 0,
                   perplexity: float = 30.0, iterations: int = 1000) -> LatentEmbedding:
    """Encode both datasets, sample the prior, and project everything to 2-D.

    Rows keep their source label (healthy / anomalous / prior). The
    projection is a stochastic neighbor embedding seeded for
    reproducibility; perplexity is reduced automatically for small inputs.
    """
    healthy = _encode_codes(checkpoint, np.asarray(healthy_images))
    anomalous = _encode_codes(checkpoint, np.asarray(anomalous_images))
    rng = np.random.default_rng(seed)
    prior = rng.standard_normal((prior_sample_count, checkpoint.descriptor.latent_dim))
    latents = np.concatenate([healthy, anomalous, prior], axis=0).astype(np.float64)
    labels = (
        ["healthy"] * len(healthy) + ["anomalous"] * len(anomalous) + ["prior"] * len(prior)
    )
    from sklearn.manifold import TSNE

    n = len(latents)
    if n < 4:
        raise ContractError("embedding needs at least 4 points")
    effective_perplexity = min(perplexity, (n - 1) / 3)
    projector = TSNE(
        n_components=2,
        perplexity=effective_perplexity,
        max_iter=iterations,
        init="pca",
        random_state=seed,
    )
    embedding = projector.fit_transform(latents)
    return LatentEmbedding(labels=labels, latents=latents, embedding=embedding)


def write_embedding_csv(embedding: LatentEmbedding, path, include_latents: bool = False):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        header = ["label", "x", "y"]
        if include_latents:
            header += [f"z{i}" for i in range(embedding.latents.shape[1])]
        writer.writerow(header)
        for index, label in enumerate(embedding.labels):
            row = [label,
                   repr(float(embedding.embedding[index, 0])),
                   repr(float(embedding.embedding[index, 1]))]
            if include_latents:
                row += [repr(float(v)) for v in embedding.latents[index]]
            writer.writerow(row)
