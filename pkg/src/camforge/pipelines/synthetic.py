"""Synthetic-image surrogate: smooth textures passed through an upsampling
stage, reproducing the periodic frequency-domain artifacts of generative
pipelines without training one."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..imageops import ParameterError
from ..seeding import derive_seed, seeded_rng

UPSAMPLE_MODES = ("nearest", "transposed-conv-fixed")

# Fixed channel-mixing weights; mild correlation like shared generator features.
_COLOR_MIX = np.array([
    [0.70, 0.20, 0.10],
    [0.15, 0.70, 0.15],
    [0.10, 0.20, 0.70],
])

# Fixed transposed-convolution taps: unit mean gain per axis, deliberate
# phase imbalance (0.91 vs 1.09) so the stride-2 lattice leaves spectral peaks.
_TCONV_TAPS = np.array([0.20, 0.90, 0.80, 0.30]) / 1.1


@dataclass(frozen=True)
class GanSurrogateConfig:
    base_resolution: int = 32
    upsample_factor: int = 2
    upsample_mode: str = "nearest"
    texture_seed: int = 0

    def validate(self, patch_size: int | None = None) -> "GanSurrogateConfig":
        if self.base_resolution < 4:
            raise ParameterError("base_resolution must be at least 4")
        f = self.upsample_factor
        if f < 1 or (f & (f - 1)):
            raise ParameterError(f"upsample_factor must be a power of 2, got {f}")
        if self.upsample_mode not in UPSAMPLE_MODES:
            raise ParameterError(f"unknown upsample_mode {self.upsample_mode!r}")
        if patch_size is not None and self.base_resolution * f != patch_size:
            raise ParameterError(
                f"base_resolution * upsample_factor = {self.base_resolution * f}"
                f" does not match patch size {patch_size}")
        return self

    @property
    def output_size(self) -> int:
        return self.base_resolution * self.upsample_factor


def _upsample_nearest(x: np.ndarray, factor: int) -> np.ndarray:
    return np.repeat(np.repeat(x, factor, axis=0), factor, axis=1)


def _upsample_tconv(x: np.ndarray, factor: int) -> np.ndarray:
    """Repeated stride-2 transposed convolution with fixed taps."""
    taps = _TCONV_TAPS
    while factor > 1:
        h, w, _ = x.shape
        stuffed = np.zeros((2 * h + len(taps), 2 * w + len(taps), 3))
        stuffed[1:2 * h:2, 1:2 * w:2] = x
        out = np.zeros((2 * h, 2 * w, 3))
        for i, ti in enumerate(taps):
            for j, tj in enumerate(taps):
                out += ti * tj * stuffed[i:i + 2 * h, j:j + 2 * w]
        x = out
        factor //= 2
    return x


def make_synthetic(cfg: GanSurrogateConfig, seed: int) -> np.ndarray:
    """One synthetic image in [-1, 1] of size cfg.output_size, per seed.

    Content comes from the same procedural scene family the camera pipelines
    photograph (generated images depict ordinary content); what marks the
    image as synthetic is the generation pipeline itself: channel mixing and
    the fixed upsampling stage with its spectral signature.
    """
    cfg.validate()
    from .scenes import render_scene

    content = render_scene(derive_seed("camforge-synthetic", cfg.texture_seed, seed),
                           cfg.base_resolution)
    base = (content + 1.0) / 2.0
    base = base @ _COLOR_MIX.T

    # Tone-align with the mid-range camera output family.
    base = 0.531 + 0.80 * (base - base.mean())
    base = np.clip(base, 0.03, 0.97)

    if cfg.upsample_factor > 1:
        if cfg.upsample_mode == "nearest":
            up = _upsample_nearest(base, cfg.upsample_factor)
        else:
            up = _upsample_tconv(base, cfg.upsample_factor)
    else:
        up = base
    return np.clip(up, 0.0, 1.0) * 2.0 - 1.0
