"""Procedural phantoms: smooth elliptical "anatomy" plus injected bright blobs.

The healthy phantom family is an ellipse of varying axes/orientation
carrying a low-frequency random texture field, rendered at 4x resolution
and area-averaged down to 32x32. Varying the shape and texture across
images reproduces the regime the latent constraint targets: inter-image
healthy variability comparable to, or larger than, the change a small
lesion causes.

Anomalies are additive bright discs placed fully inside the foreground;
the returned mask is exactly the set of modified pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_erosion, gaussian_filter

from .data import Dataset
from .errors import ConfigError, ContractError, PlacementError
from .preprocess import TARGET_SIZE, downsample, standardize

SUPERSAMPLE = 4


def _check_range(name, rng, minimum=None):
    lo, hi = float(rng[0]), float(rng[1])
    if lo > hi:
        raise ConfigError(f"{name} range is empty: ({lo}, {hi})")
    if minimum is not None and lo < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got lower bound {lo}")
    return (lo, hi)


@dataclass
class PhantomSpec:
    """Generation parameters for the synthetic benchmark.

    Ranges are (low, high) tuples sampled uniformly per image; a degenerate
    range (low == high) pins the parameter. Anomaly offsets are expressed
    in the units of the image the blob is injected into (standardized
    units in the benchmark flow, where injection happens after the
    training affine is applied).

    ``edge_softness`` fades intensity linearly to zero over the outer
    fraction of the elliptical radius (0 keeps the hard edge). The support
    (set of nonzero pixels) is the same either way, so foreground masks
    and anomaly placement are unaffected.
    """

    seed: int = 0
    n_images: int = 1
    semi_axis_a: tuple[float, float] = (9.0, 13.0)
    semi_axis_b: tuple[float, float] = (7.0, 11.0)
    orientation: tuple[float, float] = (0.0, np.pi)
    texture_amplitude: tuple[float, float] = (0.1, 0.35)
    texture_smoothness: float = 2.5
    center_jitter: float = 1.5
    base_intensity: float = 1.0
    edge_softness: float = 0.0
    anomaly_radius: tuple[float, float] = (1.5, 3.0)
    anomaly_offset: tuple[float, float] = (2.0, 3.5)

    def __post_init__(self):
        if self.n_images < 1:
            raise ConfigError(f"n_images must be >= 1, got {self.n_images}")
        self.semi_axis_a = _check_range("semi_axis_a", self.semi_axis_a, minimum=1.0)
        self.semi_axis_b = _check_range("semi_axis_b", self.semi_axis_b, minimum=1.0)
        self.orientation = _check_range("orientation", self.orientation)
        self.texture_amplitude = _check_range("texture_amplitude", self.texture_amplitude)
        self.anomaly_radius = _check_range("anomaly_radius", self.anomaly_radius, minimum=1.0)
        self.anomaly_offset = _check_range("anomaly_offset", self.anomaly_offset)
        if self.texture_smoothness <= 0:
            raise ConfigError("texture_smoothness must be positive")
        if self.center_jitter < 0:
            raise ConfigError("center_jitter must be non-negative")
        if not 0.0 <= self.edge_softness < 1.0:
            raise ConfigError("edge_softness must lie in [0, 1)")


def _render_healthy(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    """Render one healthy phantom at 4x resolution and downsample to 32x32."""
    size = TARGET_SIZE * SUPERSAMPLE
    a = rng.uniform(*spec.semi_axis_a) * SUPERSAMPLE
    b = rng.uniform(*spec.semi_axis_b) * SUPERSAMPLE
    theta = rng.uniform(*spec.orientation)
    cy, cx = (size - 1) / 2 + rng.uniform(-1, 1, size=2) * spec.center_jitter * SUPERSAMPLE
    amplitude = rng.uniform(*spec.texture_amplitude)
    noise = rng.standard_normal((size, size))

    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    rho = np.sqrt((u / a) ** 2 + (v / b) ** 2)
    mask = rho <= 1.0
    if spec.edge_softness > 0:
        window = np.clip((1.0 - rho) / spec.edge_softness, 0.0, 1.0)
    else:
        window = mask.astype(float)

    image = np.zeros((size, size))
    if amplitude > 0:
        texture = gaussian_filter(noise, sigma=spec.texture_smoothness * SUPERSAMPLE)
        inside = texture[mask]
        spread = inside.std()
        if spread > 0:
            texture = (texture - inside.mean()) / spread
        image[mask] = window[mask] * (spec.base_intensity + amplitude * texture[mask])
    else:
        image[mask] = window[mask] * spec.base_intensity
    return downsample(image)


def generate_healthy(spec: PhantomSpec) -> Dataset:
    """Generate a deterministic dataset of healthy 32x32 phantoms (no masks)."""
    rng = np.random.default_rng(spec.seed)
    images = np.stack([_render_healthy(spec, rng) for _ in range(spec.n_images)])
    return Dataset(images=images.astype(np.float32), split="train")


def disk_offsets(radius: float) -> np.ndarray:
    """Integer offsets (di, dj) with di^2 + dj^2 <= radius^2.

    This is the disc definition used for anomaly footprints: an
    integer-centered discrete disc under squared Euclidean distance.
    """
    reach = int(np.floor(radius))
    span = np.arange(-reach, reach + 1)
    di, dj = np.meshgrid(span, span, indexing="ij")
    keep = di**2 + dj**2 <= radius**2
    return np.stack([di[keep], dj[keep]], axis=1)


def inject_anomaly(image: np.ndarray, spec: PhantomSpec, seed: int,
                   foreground: np.ndarray | None = None):
    """Add a bright disc inside the foreground; return (image, binary mask).

    The disc radius and intensity offset are drawn from the spec's anomaly
    ranges using ``seed``. Pixels outside the returned mask are unchanged
    bitwise. ``foreground`` defaults to the nonzero pixels of ``image``;
    pass it explicitly for standardized images where background is no
    longer zero.
    """
    image = np.asarray(image)
    if image.shape != (TARGET_SIZE, TARGET_SIZE):
        raise ContractError(f"expected a {TARGET_SIZE}x{TARGET_SIZE} image, got {image.shape}")
    if foreground is None:
        foreground = image != 0
    else:
        foreground = np.asarray(foreground, dtype=bool)
        if foreground.shape != image.shape:
            raise ContractError("foreground mask shape does not match image")

    rng = np.random.default_rng(seed)
    radius = rng.uniform(*spec.anomaly_radius)
    offset = rng.uniform(*spec.anomaly_offset)

    offsets = disk_offsets(radius)
    reach = int(np.max(np.abs(offsets)))
    structure = np.zeros((2 * reach + 1, 2 * reach + 1), dtype=bool)
    structure[offsets[:, 0] + reach, offsets[:, 1] + reach] = True
    candidates = binary_erosion(foreground, structure=structure, border_value=0)
    centers = np.argwhere(candidates)
    if centers.size == 0:
        raise PlacementError(
            f"foreground too small to place a radius-{radius:.2f} blob"
        )
    ci, cj = centers[rng.integers(len(centers))]

    mask = np.zeros(image.shape, dtype=np.uint8)
    mask[ci + offsets[:, 0], cj + offsets[:, 1]] = 1
    out = image.copy()
    out[mask == 1] += offset
    return out, mask


@dataclass
class BenchmarkArchives:
    """Train/test datasets produced by :func:`make_benchmark`."""

    train: Dataset
    test: Dataset
    healthy_test: Dataset = field(repr=False, default=None)


def make_benchmark(spec: PhantomSpec, n_train: int, n_test: int,
                   nonzero_only: bool = True) -> BenchmarkArchives:
    """Build standardized train/test phantom datasets with ground-truth masks.

    Healthy training images are generated and standardized; the same
    affine is applied to a fresh healthy test batch before anomalies are
    injected, so the spec's anomaly offsets act in standardized units.
    """
    train_spec = PhantomSpec(**{**spec.__dict__, "seed": spec.seed, "n_images": n_train})
    raw_train = generate_healthy(train_spec)
    train = standardize(raw_train, nonzero_only=nonzero_only)
    train.split = "train"

    test_seed = spec.seed + 1_000_003
    test_spec = PhantomSpec(**{**spec.__dict__, "seed": test_seed, "n_images": n_test})
    raw_test = generate_healthy(test_spec)
    foregrounds = raw_test.images != 0
    stdized = standardize(raw_test, stats=train.meta["normalization"])

    seeds = np.random.SeedSequence(test_seed).spawn(n_test)
    images, masks = [], []
    for i in range(n_test):
        child_seed = int(seeds[i].generate_state(1)[0])
        img, mask = inject_anomaly(
            stdized.images[i], spec, child_seed, foreground=foregrounds[i]
        )
        images.append(img)
        masks.append(mask)
    test = Dataset(
        images=np.stack(images).astype(np.float32),
        masks=np.stack(masks),
        split="test",
        meta=dict(stdized.meta),
    )
    healthy_test = Dataset(
        images=stdized.images.astype(np.float32),
        split="test",
        meta=dict(stdized.meta),
    )
    return BenchmarkArchives(train=train, test=test, healthy_test=healthy_test)
