"""
Generadores sinteticos deterministas: texturas, bordes, tableros y PSFs gaussianas.
"""
from __future__ import annotations

from typing import Final

import numpy as np
from scipy.ndimage import gaussian_filter

from core.errors import InvalidArgumentError
from core.images import ImageTensor

SUITE_KINDS: Final[tuple[str, ...]] = ("texture", "edges", "checkerboard", "disk")


def checkerboard(height: int, width: int, square: int, *, channels: int = 3, low: float = 0.1, high: float = 0.9) -> ImageTensor:
    if square < 1:
        raise InvalidArgumentError(f"El lado del cuadro debe ser >= 1 (recibido {square}).")
    rows = (np.arange(height) // square)[:, None]
    cols = (np.arange(width) // square)[None, :]
    plane = np.where((rows + cols) % 2 == 0, low, high)
    return ImageTensor(np.repeat(plane[None], channels, axis=0))


def gaussian_psf(size: int, sigma: float, offset: tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    """PSF gaussiana de suma unitaria centrada en (size//2 + dx, size//2 + dy)."""
    if size < 1 or sigma <= 0:
        raise InvalidArgumentError("gaussian_psf requiere size >= 1 y sigma > 0.")
    axis = np.arange(size) - size // 2
    gx = np.exp(-0.5 * ((axis - offset[0]) / sigma) ** 2)
    gy = np.exp(-0.5 * ((axis - offset[1]) / sigma) ** 2)
    psf = gy[:, None] * gx[None, :]
    return psf / psf.sum()


def delta_psf(size: int) -> np.ndarray:
    psf = np.zeros((size, size))
    psf[size // 2, size // 2] = 1.0
    return psf


def _texture(rng: np.random.Generator, size: int) -> np.ndarray:
    noise = rng.random((3, size, size))
    smooth = np.stack([gaussian_filter(ch, sigma=size / 16, mode="wrap") for ch in noise])
    smooth -= smooth.min(axis=(1, 2), keepdims=True)
    smooth /= np.maximum(smooth.max(axis=(1, 2), keepdims=True), 1e-12)
    return 0.15 + 0.7 * smooth


def _edges(rng: np.random.Generator, size: int) -> np.ndarray:
    angle = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[0:size, 0:size] - (size - 1) / 2.0
    side = (np.cos(angle) * xx + np.sin(angle) * yy) > 0
    low, high = sorted(rng.uniform(0.1, 0.9, size=2))
    plane = np.where(side, high, low)
    tint = rng.uniform(0.7, 1.0, size=3)
    return plane[None] * tint[:, None, None]


def _disk(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] - (size - 1) / 2.0
    radius = rng.uniform(0.2, 0.4) * size
    plane = np.where(xx**2 + yy**2 <= radius**2, 0.85, 0.15)
    tint = rng.uniform(0.6, 1.0, size=3)
    return plane[None] * tint[:, None, None]


def procedural_suite(count: int = 20, size: int = 64, seed: int = 0) -> list[tuple[str, ImageTensor]]:
    """
    Suite determinista de imagenes lineales (texturas suaves, bordes, tableros, discos).

    Returns:
        Lista de (nombre, imagen) en orden estable.
    """
    rng = np.random.default_rng(seed)
    suite: list[tuple[str, ImageTensor]] = []
    for index in range(count):
        kind = SUITE_KINDS[index % len(SUITE_KINDS)]
        if kind == "texture":
            values = _texture(rng, size)
        elif kind == "edges":
            values = _edges(rng, size)
        elif kind == "checkerboard":
            values = checkerboard(size, size, int(rng.integers(4, 12))).values
        else:
            values = _disk(rng, size)
        suite.append((f"{kind}_{index:03d}", ImageTensor(values)))
    return suite
