"""Vectorized numpy implementations of the per-pixel kernels.

Semantics are pinned so the compiled backend can match byte-for-byte:
neighborhood sums are exact integer sums, scaling happens in float64 as a
single multiply, and rounding is round-half-up via floor(x + 0.5).
"""

from __future__ import annotations

import numpy as np

NAME = "fallback"


def blur_box(padded: np.ndarray, kernel: int, weight: float) -> np.ndarray:
    """Weighted box filter over an edge-padded uint8 image.

    ``padded`` is (H + kernel - 1, W + kernel - 1, 3); returns (H, W, 3).
    """
    k = kernel
    h = padded.shape[0] - (k - 1)
    w = padded.shape[1] - (k - 1)
    acc = np.zeros((h, w, padded.shape[2]), dtype=np.int64)
    src = padded.astype(np.int64, copy=False)
    for dy in range(k):
        for dx in range(k):
            acc += src[dy : dy + h, dx : dx + w]
    out = np.floor(acc * float(weight) + 0.5)
    np.clip(out, 0.0, 255.0, out=out)
    return out.astype(np.uint8)


def downscale_mean(pixels: np.ndarray, divisor: int) -> np.ndarray:
    """Block mean with round-half-up; output dims floor(h/d) x floor(w/d)."""
    d = divisor
    h2 = pixels.shape[0] // d
    w2 = pixels.shape[1] // d
    trimmed = pixels[: h2 * d, : w2 * d].astype(np.int64, copy=False)
    sums = trimmed.reshape(h2, d, w2, d, 3).sum(axis=(1, 3))
    # round-half-up of sums / d^2, in exact integer arithmetic
    d2 = d * d
    out = (2 * sums + d2) // (2 * d2)
    return out.astype(np.uint8)


def binarize_luma(pixels: np.ndarray, threshold: int) -> np.ndarray:
    """0/1 mask of pixels whose rounded Rec.601 luma reaches ``threshold``."""
    f = pixels.astype(np.float64)
    luma = np.floor((f[:, :, 0] * 0.299 + f[:, :, 1] * 0.587) + f[:, :, 2] * 0.114 + 0.5)
    return (luma >= threshold).astype(np.uint8)


def label4(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected component labeling of a 0/1 mask.

    Returns (labels, count); label values are distinct per component but
    otherwise arbitrary, so callers must not rely on the numbering.
    """
    from scipy import ndimage  # deferred: keeps client-side imports light

    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.uint8)
    labels, count = ndimage.label(mask, structure=structure)
    return labels.astype(np.int32, copy=False), int(count)
