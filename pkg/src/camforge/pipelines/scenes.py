"""Procedural scene rendering: deterministic stand-ins for raw photographs.

Scenes combine multi-octave smooth textures, low-frequency chroma, and a few
soft-edged shapes so that demosaicing, sharpening, and compression all leave
visible traces.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import zoom

from ..seeding import seeded_rng


def _octave_noise(rng: np.random.Generator, size: int) -> np.ndarray:
    out = np.zeros((size, size), dtype=np.float64)
    grid, weight = 4, 1.0
    while grid <= size // 2:
        coarse = rng.normal(0.0, 1.0, (grid, grid))
        out += weight * zoom(coarse, size / grid, order=3)
        grid *= 2
        weight *= 0.55
    return out


def _soft_shape(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = rng.uniform(0.15 * size, 0.85 * size, 2)
    ry, rx = rng.uniform(0.08 * size, 0.3 * size, 2)
    if rng.random() < 0.5:
        dist = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
    else:
        dist = np.maximum(np.abs(yy - cy) / ry, np.abs(xx - cx) / rx)
    return 1.0 / (1.0 + np.exp((dist - 1.0) * 10.0))


def render_scene(seed: int, size: int = 128) -> np.ndarray:
    """Render one (size, size, 3) scene in [-1, 1], deterministic per seed."""
    rng = seeded_rng("camforge-scene", seed)
    lum = _octave_noise(rng, size)
    chroma_a = zoom(rng.normal(0.0, 1.0, (4, 4)), size / 4, order=3)
    chroma_b = zoom(rng.normal(0.0, 1.0, (4, 4)), size / 4, order=3)

    img = np.stack([
        lum + 0.45 * chroma_a,
        lum - 0.20 * chroma_a + 0.25 * chroma_b,
        lum - 0.45 * chroma_b,
    ], axis=-1)

    for _ in range(int(rng.integers(2, 5))):
        mask = _soft_shape(size, rng)
        color = rng.uniform(-1.2, 1.2, 3)
        img = img * (1 - 0.7 * mask[..., None]) + color * 0.7 * mask[..., None]

    lo, hi = np.quantile(img, [0.01, 0.99])
    img = (img - lo) / max(hi - lo, 1e-9)
    img = 0.08 + 0.84 * np.clip(img, 0.0, 1.0)
    return img * 2.0 - 1.0
