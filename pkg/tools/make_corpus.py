"""Generates the bundled benchmark corpus: 20 deterministic 960x540 images.

Each image layers multi-octave value noise, a color gradient, soft shapes,
and fine-grain texture, approximating the spectral character of natural
photos (smooth structure plus high-frequency detail) without shipping
third-party photographs. Run once; the JPEGs are committed.

    python tools/make_corpus.py tests/fixtures/corpus
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
from PIL import Image

WIDTH, HEIGHT = 960, 540
COUNT = 20


def value_noise(rng: np.random.Generator, w: int, h: int, cells: int, amplitude: float) -> np.ndarray:
    """Smooth random field: a coarse grid upsampled bilinearly."""
    coarse = rng.random((max(2, h // cells), max(2, w // cells))) * amplitude
    img = Image.fromarray((coarse * 255).astype(np.uint8), "L").resize((w, h), Image.BILINEAR)
    return np.asarray(img, dtype=np.float64) / 255.0 * amplitude


def gradient(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
    gx = rng.uniform(-1, 1)
    gy = rng.uniform(-1, 1)
    xs = np.linspace(0, 1, w)[None, :]
    ys = np.linspace(0, 1, h)[:, None]
    g = gx * xs + gy * ys
    g -= g.min()
    if g.max() > 0:
        g /= g.max()
    return g


def soft_shapes(rng: np.random.Generator, w: int, h: int, count: int) -> np.ndarray:
    field = np.zeros((h, w))
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    for _ in range(count):
        cx = rng.uniform(0, w)
        cy = rng.uniform(0, h)
        rx = rng.uniform(w * 0.05, w * 0.25)
        ry = rng.uniform(h * 0.05, h * 0.25)
        blob = np.exp(-(((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2))
        field += rng.uniform(-0.6, 0.6) * blob
    return field


def make_image(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    channels = []
    base_hue = rng.random(3) * 0.5 + 0.25
    structure = (
        value_noise(rng, WIDTH, HEIGHT, 120, 0.5)
        + value_noise(rng, WIDTH, HEIGHT, 40, 0.3)
        + value_noise(rng, WIDTH, HEIGHT, 12, 0.2)
        + soft_shapes(rng, WIDTH, HEIGHT, 6)
        + 0.4 * gradient(rng, WIDTH, HEIGHT)
    )
    fine = rng.normal(0, 0.035, size=(HEIGHT, WIDTH))
    for c in range(3):
        chan = base_hue[c] + structure * rng.uniform(0.6, 1.0) + fine
        channels.append(chan)
    img = np.stack(channels, axis=-1)
    img -= img.min()
    img /= img.max()
    return (img * 255).astype(np.uint8)


def main() -> int:
    out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("tests/fixtures/corpus")
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(COUNT):
        pixels = make_image(seed=1000 + i)
        Image.fromarray(pixels, "RGB").save(out_dir / f"scene_{i:02d}.jpg", quality=90)
    print(f"wrote {COUNT} images to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
