"""Reconstruction-residual anomaly scoring.

A test image is encoded and decoded by a trained model; the per-pixel
absolute difference between input and reconstruction is the anomaly
score field. VAE inference is deterministic: the posterior mean is used
as the latent code rather than a sample.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

from .data import Dataset
from .errors import ContractError
from .models import Checkpoint, LatentDistribution


def residual_map(x: np.ndarray, x_prime: np.ndarray) -> np.ndarray:
    """Elementwise absolute difference |x - x'| (symmetric, non-negative)."""
    x = np.asarray(x)
    x_prime = np.asarray(x_prime)
    if x.shape != x_prime.shape:
        raise ContractError(f"shape mismatch: {x.shape} vs {x_prime.shape}")
    return np.abs(x - x_prime)


def _codes_for(checkpoint: Checkpoint, batch: torch.Tensor) -> torch.Tensor:
    out = checkpoint.encoder(batch)
    if isinstance(out, LatentDistribution):
        return out.mean
    return out


def reconstruct_batch(checkpoint: Checkpoint, images: np.ndarray) -> np.ndarray:
    """Encode-decode a stack of images through a trained model.

    Images are processed one at a time: batched matrix kernels are not
    bit-identical across batch shapes, and stacked results must equal
    per-image calls exactly.
    """
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 2:
        return reconstruct_batch(checkpoint, images[None])[0]
    size = checkpoint.descriptor.image_size
    if images.shape[1:] != (size, size):
        raise ContractError(
            f"images are {images.shape[1:]}, model expects {(size, size)}; "
            "run the preprocessing pipeline first"
        )
    if len(images) == 0:
        return images.copy()
    checkpoint.encoder.eval()
    checkpoint.decoder.eval()
    outputs = []
    with torch.no_grad():
        for image in images:
            codes = _codes_for(checkpoint, torch.from_numpy(image[None]))
            outputs.append(checkpoint.decoder(codes).numpy())
    return np.concatenate(outputs, axis=0)


def reconstruct(checkpoint: Checkpoint, image: np.ndarray) -> np.ndarray:
    """Reconstruct a single image (deterministic given the checkpoint)."""
    return reconstruct_batch(checkpoint, np.asarray(image)[None])[0]


@dataclass
class DetectionResult:
    """Order-preserving per-image outputs of a detection pass."""

    images: np.ndarray
    reconstructions: np.ndarray
    residuals: np.ndarray
    masks: np.ndarray | None = None

    def __len__(self):
        return len(self.images)


def detect(checkpoint: Checkpoint, dataset: Dataset) -> DetectionResult:
    """Reconstruct every image in a dataset and compute its residual map."""
    if len(dataset) == 0:
        empty = np.empty((0,) + dataset.image_shape, dtype=np.float32)
        return DetectionResult(empty, empty.copy(), empty.copy(), dataset.masks)
    reconstructions = reconstruct_batch(checkpoint, dataset.images)
    residuals = residual_map(dataset.images.astype(np.float32), reconstructions)
    return DetectionResult(
        images=dataset.images.astype(np.float32),
        reconstructions=reconstructions,
        residuals=residuals,
        masks=dataset.masks,
    )


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def save_residual_records(residuals: np.ndarray, directory):
    """Write residual maps as float32 records with a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    residuals = np.asarray(residuals, dtype=np.float32)
    residuals.astype("<f4").tofile(directory / "residuals.f32")
    manifest = {
        "count": int(residuals.shape[0]),
        "height": int(residuals.shape[1]),
        "width": int(residuals.shape[2]),
        "dtype": "float32",
        "byte_order": "little",
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def save_heatmap_png(residual: np.ndarray, path):
    """Write one residual map as an 8-bit grayscale PNG, min-max scaled.

    The scaling is recorded in a ``<path>.json`` sidecar so scores can be
    recovered from the image.
    """
    path = Path(path)
    residual = np.asarray(residual, dtype=np.float64)
    lo, hi = float(residual.min()), float(residual.max())
    scale = hi - lo
    if scale == 0.0:
        pixels = np.zeros_like(residual)
    else:
        pixels = (residual - lo) / scale
    PILImage.fromarray(np.round(pixels * 255).astype(np.uint8), mode="L").save(path)
    sidecar = {"min": lo, "max": hi}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))


def save_heatmaps(residuals: np.ndarray, directory, prefix: str = "residual"):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for index, residual in enumerate(residuals):
        save_heatmap_png(residual, directory / f"{prefix}_{index:04d}.png")
