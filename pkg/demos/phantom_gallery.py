"""Gallery of synthetic phantoms: healthy textures and injected anomalies.

Generates a small benchmark, prints its statistics, and writes a montage
PNG (healthy | anomalous | ground-truth mask per row) to demos/output/.

Run:  python3 demos/phantom_gallery.py
"""

from pathlib import Path

import numpy as np
from PIL import Image

from reconad.phantom import PhantomSpec, generate_healthy, make_benchmark

OUTPUT = Path(__file__).parent / "output"


def to_uint8(image, lo=None, hi=None):
    lo = image.min() if lo is None else lo
    hi = image.max() if hi is None else hi
    span = hi - lo if hi > lo else 1.0
    return np.round(np.clip((image - lo) / span, 0, 1) * 255).astype(np.uint8)


def main():
    OUTPUT.mkdir(exist_ok=True)
    spec = PhantomSpec(seed=5, n_images=6)

    healthy = generate_healthy(PhantomSpec(**{**spec.__dict__, "n_images": 6}))
    print("healthy phantoms:", healthy.images.shape, healthy.images.dtype)
    print(f"  intensity range [{healthy.images.min():.3f}, {healthy.images.max():.3f}]")
    print(f"  foreground fraction {np.mean(healthy.images != 0):.2f}")

    bench = make_benchmark(spec, n_train=64, n_test=6)
    print("\nbenchmark: train", bench.train.images.shape,
          "test", bench.test.images.shape)
    foreground = generate_healthy(
        PhantomSpec(**{**spec.__dict__, "n_images": 64})
    ).images != 0
    pooled = bench.train.images[foreground]
    print(f"  standardized train foreground: mean {pooled.mean():+.2e}, "
          f"std {pooled.std():.4f}")
    per_image = bench.test.masks.reshape(len(bench.test), -1).sum(axis=1)
    print(f"  anomaly sizes (pixels): {sorted(per_image.tolist())}")

    rows = []
    for i in range(len(bench.test)):
        anomalous = bench.test.images[i]
        clean = bench.healthy_test.images[i]
        lo, hi = min(clean.min(), anomalous.min()), max(clean.max(), anomalous.max())
        tiles = [
            to_uint8(clean, lo, hi),
            to_uint8(anomalous, lo, hi),
            bench.test.masks[i] * 255,
        ]
        tiles = [np.kron(t, np.ones((4, 4), dtype=np.uint8)) for t in tiles]
        gap = np.full((tiles[0].shape[0], 4), 255, dtype=np.uint8)
        rows.append(np.concatenate([tiles[0], gap, tiles[1], gap, tiles[2]], axis=1))
        rows.append(np.full((4, rows[-1].shape[1]), 255, dtype=np.uint8))
    montage = np.concatenate(rows[:-1], axis=0)
    path = OUTPUT / "phantom_gallery.png"
    Image.fromarray(montage, mode="L").save(path)
    print(f"\nwrote montage (healthy | anomalous | mask) to {path}")


if __name__ == "__main__":
    main()
