"""Intensity normalization, slicing and downsampling of input volumes.

The preprocessing chain mirrors the training data pipeline: histogram
normalization against a reference quantile profile, pooled zero-mean /
unit-variance standardization (with the affine recorded for inversion),
2-D slice extraction and area-average downsampling to 32x32.

Intensity statistics are computed over nonzero voxels only by default:
skull-stripped slices are mostly background, and pooling zeros in would
swamp the tissue statistics.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset, Volume
from .errors import BoundsError, ContractError, DegenerateInputError, SizeError

TARGET_SIZE = 32

#: Quantile landmarks of the reference profile: deciles plus min/max.
PROFILE_QUANTILES = np.linspace(0.0, 1.0, 11)


# ---------------------------------------------------------------------------
# Histogram normalization
# ---------------------------------------------------------------------------


def build_reference_profile(volumes) -> np.ndarray:
    """Build a monotone quantile table from the nonzero voxels of training volumes.

    Returns the intensity values at the landmark quantiles (deciles plus
    min/max), pooled over all volumes.
    """
    pooled = []
    for volume in volumes:
        voxels = volume.voxels
        pooled.append(voxels[voxels != 0])
    pooled = np.concatenate(pooled) if pooled else np.empty(0)
    if pooled.size == 0:
        raise DegenerateInputError("no nonzero voxels to build a reference profile from")
    if pooled.max() == pooled.min():
        raise DegenerateInputError("reference volumes have constant intensity")
    return np.quantile(pooled, PROFILE_QUANTILES)


def _validate_profile(reference: np.ndarray) -> np.ndarray:
    reference = np.asarray(reference, dtype=float)
    if reference.ndim != 1 or reference.size < 2:
        raise ContractError("reference profile must be a 1-D table with >= 2 landmarks")
    if np.any(np.diff(reference) < 0):
        raise ContractError("reference profile must be monotone non-decreasing")
    return reference


def histogram_normalize(volume: Volume, reference: np.ndarray) -> Volume:
    """Map a volume's nonzero intensities onto the reference quantile profile.

    The map is piecewise linear between the volume's own landmark values
    and the reference landmarks, hence monotone: voxel rank order is
    preserved. Zero (background) voxels are left untouched.
    """
    reference = _validate_profile(reference)
    voxels = volume.voxels
    nonzero = voxels != 0
    values = voxels[nonzero]
    if values.size == 0:
        raise DegenerateInputError("volume has no nonzero voxels")
    if values.max() == values.min():
        raise DegenerateInputError("cannot histogram-normalize a constant-intensity volume")
    quantiles = np.linspace(0.0, 1.0, reference.size)
    own = np.quantile(values, quantiles)
    # np.interp needs strictly increasing abscissae; collapse duplicate
    # landmarks (heavy ties) while keeping the map monotone.
    keep = np.concatenate(([True], np.diff(own) > 0))
    mapped = np.interp(values, own[keep], reference[keep])
    out = voxels.astype(float, copy=True)
    out[nonzero] = mapped
    return Volume(voxels=out, spacing=volume.spacing, subject_id=volume.subject_id)


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------


def fit_standardization(dataset: Dataset, nonzero_only: bool = True) -> dict:
    """Compute the pooled (mean, std) affine over a dataset's pixels."""
    if len(dataset) == 0:
        raise DegenerateInputError("cannot standardize an empty dataset")
    pixels = dataset.images
    if nonzero_only:
        pixels = pixels[pixels != 0]
        if pixels.size == 0:
            raise DegenerateInputError("dataset has no nonzero pixels")
    mean = float(np.mean(pixels))
    std = float(np.std(pixels))
    if std == 0.0:
        raise DegenerateInputError("dataset has zero pooled variance")
    return {"mean": mean, "std": std, "nonzero_only": bool(nonzero_only)}


def standardize(dataset: Dataset, stats: dict | None = None, nonzero_only: bool = True) -> Dataset:
    """Apply (or fit then apply) the pooled zero-mean/unit-variance affine.

    The affine used is recorded in the result's ``meta['normalization']``
    so that :func:`unstandardize` can invert it and so that a test split
    can reuse the training affine.
    """
    if stats is None:
        stats = fit_standardization(dataset, nonzero_only=nonzero_only)
    images = (dataset.images - stats["mean"]) / stats["std"]
    meta = dict(dataset.meta)
    meta["normalization"] = dict(stats)
    return Dataset(images=images, masks=dataset.masks, split=dataset.split, meta=meta)


def unstandardize(dataset: Dataset) -> Dataset:
    """Invert a recorded standardization affine."""
    stats = dataset.meta.get("normalization")
    if stats is None:
        raise ContractError("dataset has no recorded normalization to invert")
    images = dataset.images * stats["std"] + stats["mean"]
    meta = {k: v for k, v in dataset.meta.items() if k != "normalization"}
    return Dataset(images=images, masks=dataset.masks, split=dataset.split, meta=meta)


# ---------------------------------------------------------------------------
# Slicing and downsampling
# ---------------------------------------------------------------------------


def extract_slices(volume: Volume, axis: int, index_range: tuple[int, int],
                   keep_threshold: float = 0.05) -> list[np.ndarray]:
    """Extract 2-D planes [lo, hi] (inclusive) along an axis, in index order.

    Slices with fewer than ``keep_threshold`` nonzero pixels are dropped as
    background-only.
    """
    if axis not in (0, 1, 2):
        raise ContractError(f"axis must be 0, 1 or 2, got {axis}")
    lo, hi = int(index_range[0]), int(index_range[1])
    extent = volume.voxels.shape[axis]
    if lo < 0 or hi >= extent or lo > hi:
        raise BoundsError(f"index range [{lo}, {hi}] outside axis {axis} extent {extent}")
    moved = np.moveaxis(volume.voxels, axis, 0)
    slices = []
    for index in range(lo, hi + 1):
        plane = moved[index]
        if np.count_nonzero(plane) / plane.size >= keep_threshold:
            slices.append(np.array(plane))
    return slices


def _area_weights(source: int, target: int) -> np.ndarray:
    """Row-stochastic matrix averaging ``source`` samples into ``target`` bins.

    Each output bin covers the interval [i*s/t, (i+1)*s/t) of the source
    axis; weights are proportional to overlap, so integer decimation
    reduces to exact block means.
    """
    weights = np.zeros((target, source))
    scale = source / target
    for i in range(target):
        start, stop = i * scale, (i + 1) * scale
        first, last = int(np.floor(start)), int(np.ceil(stop))
        for j in range(first, min(last, source)):
            overlap = min(stop, j + 1) - max(start, j)
            if overlap > 0:
                weights[i, j] = overlap
    return weights / weights.sum(axis=1, keepdims=True)


def downsample(image: np.ndarray, target: tuple[int, int] = (TARGET_SIZE, TARGET_SIZE)) -> np.ndarray:
    """Anti-aliased area-average resize of a 2-D image down to ``target``."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ContractError(f"expected a 2-D image, got shape {image.shape}")
    th, tw = target
    if image.shape[0] < th or image.shape[1] < tw:
        raise SizeError(f"source {image.shape} smaller than target {target}")
    rows = _area_weights(image.shape[0], th)
    cols = _area_weights(image.shape[1], tw)
    return rows @ image @ cols.T


def preprocess_volumes(volumes, reference: np.ndarray | None = None,
                       stats: dict | None = None, axis: int = 2,
                       index_range: tuple[int, int] | None = None,
                       nonzero_only: bool = True, split: str = "train") -> Dataset:
    """Run the full chain: histogram-normalize, slice, downsample, standardize.

    When ``reference`` / ``stats`` are None they are fitted from the given
    volumes (training mode); pass the recorded values to process a test
    split with the training normalization.
    """
    if reference is None:
        reference = build_reference_profile(volumes)
    images = []
    for volume in volumes:
        normalized = histogram_normalize(volume, reference)
        extent = normalized.voxels.shape[axis]
        rng = index_range if index_range is not None else (0, extent - 1)
        for plane in extract_slices(normalized, axis, rng):
            images.append(downsample(plane))
    if not images:
        raise DegenerateInputError("preprocessing produced no usable slices")
    dataset = Dataset(images=np.stack(images), split=split)
    dataset = standardize(dataset, stats=stats, nonzero_only=nonzero_only)
    dataset.meta["reference_profile"] = [float(v) for v in np.asarray(reference)]
    return dataset
