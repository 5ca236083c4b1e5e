"""Pixel-kernel backend selection.

The compiled extension (built by setup.py) is used when importable; the
numpy fallback is always available. Override with FARSIGHT_KERNELS=native
or FARSIGHT_KERNELS=fallback, or at runtime with use().
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback

_IMPLS = {"fallback": _fallback}

try:
    from . import _native

    _IMPLS["native"] = _native
except ImportError:
    _native = None

_env = os.environ.get("FARSIGHT_KERNELS")
if _env:
    if _env not in _IMPLS:
        raise ImportError(
            f"FARSIGHT_KERNELS={_env!r} not available; choices: {sorted(_IMPLS)}"
        )
    _active = _IMPLS[_env]
else:
    _active = _IMPLS.get("native", _fallback)


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_IMPLS))


def active_backend() -> str:
    return _active.NAME


def use(name: str) -> str:
    """Select the kernel backend; returns the previously active name."""
    global _active
    if name not in _IMPLS:
        raise ValueError(f"unknown backend {name!r}; choices: {sorted(_IMPLS)}")
    previous = _active.NAME
    _active = _IMPLS[name]
    return previous


def get_backend(name: str | None = None):
    if name is None:
        return _active
    if name not in _IMPLS:
        raise ValueError(f"unknown backend {name!r}; choices: {sorted(_IMPLS)}")
    return _IMPLS[name]


def blur_box(padded: np.ndarray, kernel: int, weight: float) -> np.ndarray:
    return _active.blur_box(padded, kernel, weight)


def downscale_mean(pixels: np.ndarray, divisor: int) -> np.ndarray:
    return _active.downscale_mean(pixels, divisor)


def binarize_luma(pixels: np.ndarray, threshold: int) -> np.ndarray:
    return _active.binarize_luma(pixels, threshold)


def label4(mask: np.ndarray) -> tuple[np.ndarray, int]:
    return _active.label4(mask)
