"""Simulated camera-model development pipelines.

A profile bundles the stages that differ between camera models: Bayer
mosaic layout, color correction, tone curve, sharpening, and the JPEG
quantization tables. Running a scene through `simulate_camera` produces an
image carrying that model's characteristic traces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve

from .. import imageops, jpegcodec
from ..imageops import ParameterError

MOSAIC_PATTERNS = {
    "RGGB": ((0, 0), (0, 1), (1, 0), (1, 1)),
    "BGGR": ((1, 1), (0, 1), (1, 0), (0, 0)),
    "GRBG": ((0, 1), (0, 0), (1, 1), (1, 0)),
    "GBRG": ((1, 0), (0, 0), (1, 1), (0, 1)),
}

# Bilinear interpolation kernels over the sparse Bayer planes.
_GREEN_KERNEL = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64) / 4.0
_RB_KERNEL = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 4.0

# Annex-K example quantization tables, the usual base for quality scaling.
BASE_QUANT_LUMA = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
])
BASE_QUANT_CHROMA = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
])


def quality_scaled_tables(quality: int) -> tuple[np.ndarray, np.ndarray]:
    """libjpeg-style quality scaling of the base tables."""
    if not 1 <= quality <= 100:
        raise ParameterError(f"quality must be in 1..100, got {quality}")
    scale = 5000 / quality if quality < 50 else 200 - 2 * quality
    def scaled(base):
        return np.clip((base * scale + 50) // 100, 1, 255).astype(np.int64)
    return scaled(BASE_QUANT_LUMA), scaled(BASE_QUANT_CHROMA)


@dataclass(frozen=True)
class CameraProfile:
    model_id: str
    mosaic_pattern: str
    color_matrix: np.ndarray
    gamma: float
    sharpen_amount: float
    quant_luma: np.ndarray
    quant_chroma: np.ndarray

    def validate(self) -> "CameraProfile":
        if self.mosaic_pattern not in MOSAIC_PATTERNS:
            raise ParameterError(f"unknown mosaic pattern {self.mosaic_pattern!r}")
        m = np.asarray(self.color_matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ParameterError(f"color_matrix must be 3x3, got {m.shape}")
        if not np.allclose(m.sum(axis=1), 1.0, atol=1e-6):
            raise ParameterError("color_matrix rows must sum to 1 (white preservation)")
        if self.gamma <= 0:
            raise ParameterError(f"gamma must be positive, got {self.gamma}")
        if self.sharpen_amount < 0:
            raise ParameterError(f"sharpen_amount must be >= 0, got {self.sharpen_amount}")
        for name, q in (("quant_luma", self.quant_luma), ("quant_chroma", self.quant_chroma)):
            qa = np.asarray(q)
            if qa.shape != (8, 8) or qa.min() < 1 or qa.max() > 255:
                raise ParameterError(f"{name} must be 8x8 with entries in 1..255")
        return self

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "mosaic_pattern": self.mosaic_pattern,
            "color_matrix": np.asarray(self.color_matrix, dtype=float).tolist(),
            "gamma": self.gamma,
            "sharpen_amount": self.sharpen_amount,
            "quant_luma": np.asarray(self.quant_luma, dtype=int).reshape(64).tolist(),
            "quant_chroma": np.asarray(self.quant_chroma, dtype=int).reshape(64).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraProfile":
        return cls(
            model_id=d["model_id"],
            mosaic_pattern=d["mosaic_pattern"],
            color_matrix=np.asarray(d["color_matrix"], dtype=np.float64),
            gamma=float(d["gamma"]),
            sharpen_amount=float(d["sharpen_amount"]),
            quant_luma=np.asarray(d["quant_luma"], dtype=np.int64).reshape(8, 8),
            quant_chroma=np.asarray(d["quant_chroma"], dtype=np.int64).reshape(8, 8),
        ).validate()

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load_json(cls, path) -> "CameraProfile":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_profiles() -> list[CameraProfile]:
    """Three shipped profiles, mutually distinct in every pipeline stage."""
    ql_a, qc_a = quality_scaled_tables(88)
    ql_b, qc_b = quality_scaled_tables(74)
    ql_c, qc_c = quality_scaled_tables(62)
    return [
        CameraProfile(
            model_id="vivid-rggb",
            mosaic_pattern="RGGB",
            color_matrix=np.array([
                [1.35, -0.25, -0.10],
                [-0.10, 1.30, -0.20],
                [-0.05, -0.30, 1.35],
            ]),
            gamma=1.15,
            sharpen_amount=0.5,
            quant_luma=ql_a,
            quant_chroma=qc_a,
        ).validate(),
        CameraProfile(
            model_id="muted-bggr",
            mosaic_pattern="BGGR",
            color_matrix=np.array([
                [0.70, 0.25, 0.05],
                [0.05, 0.80, 0.15],
                [0.10, 0.25, 0.65],
            ]),
            gamma=0.85,
            sharpen_amount=1.2,
            quant_luma=ql_b,
            quant_chroma=qc_b,
        ).validate(),
        CameraProfile(
            model_id="leafy-grbg",
            mosaic_pattern="GRBG",
            color_matrix=np.array([
                [0.85, 0.30, -0.15],
                [-0.15, 1.05, 0.10],
                [0.15, -0.20, 1.05],
            ]),
            gamma=1.45,
            sharpen_amount=0.0,
            quant_luma=ql_c,
            quant_chroma=qc_c,
        ).validate(),
    ]


def mosaic(linear_rgb: np.ndarray, pattern: str) -> np.ndarray:
    """Sample one channel per pixel according to the Bayer layout."""
    r_pos, g1_pos, g2_pos, b_pos = MOSAIC_PATTERNS[pattern]
    raw = np.zeros(linear_rgb.shape[:2], dtype=np.float64)
    for (dy, dx), ch in ((r_pos, 0), (g1_pos, 1), (g2_pos, 1), (b_pos, 2)):
        raw[dy::2, dx::2] = linear_rgb[dy::2, dx::2, ch]
    return raw


def demosaic_bilinear(raw: np.ndarray, pattern: str) -> np.ndarray:
    """Bilinear demosaicing; borders handled by phase-preserving reflection."""
    r_pos, g1_pos, g2_pos, b_pos = MOSAIC_PATTERNS[pattern]
    padded = np.pad(raw, 2, mode="reflect")
    out = np.zeros(raw.shape + (3,), dtype=np.float64)
    for positions, ch, kernel in (
        ((r_pos,), 0, _RB_KERNEL),
        ((g1_pos, g2_pos), 1, _GREEN_KERNEL),
        ((b_pos,), 2, _RB_KERNEL),
    ):
        sparse = np.zeros_like(padded)
        for dy, dx in positions:
            sparse[dy::2, dx::2] = padded[dy::2, dx::2]
        filled = convolve(sparse, kernel, mode="nearest")
        out[..., ch] = filled[2:-2, 2:-2]
    return out


def unsharp_mask(x: np.ndarray, amount: float) -> np.ndarray:
    if amount == 0.0:
        return x
    blurred = np.empty_like(x)
    k = imageops.gaussian_kernel_1d(1.0)
    for c in range(3):
        plane = convolve(x[..., c], np.outer(k, k), mode="nearest")
        blurred[..., c] = plane
    return x + amount * (x - blurred)


def develop_jpeg_bytes(scene: np.ndarray, profile: CameraProfile) -> bytes:
    """Develop a scene through the profile's pipeline up to the JPEG file."""
    profile.validate()
    scene = np.asarray(scene, dtype=np.float64)
    if scene.ndim != 3 or scene.shape[2] != 3:
        raise ParameterError(f"scene must be (H, W, 3), got {scene.shape}")
    if scene.shape[0] % 2 or scene.shape[1] % 2:
        raise ParameterError("scene dimensions must be even for Bayer sampling")

    linear = np.clip((scene + 1.0) / 2.0, 0.0, 1.0)
    raw = mosaic(linear, profile.mosaic_pattern)
    rgb = demosaic_bilinear(raw, profile.mosaic_pattern)
    rgb = np.clip(rgb @ np.asarray(profile.color_matrix, dtype=np.float64).T, 0.0, 1.0)
    rgb = rgb ** (1.0 / profile.gamma)
    rgb = np.clip(unsharp_mask(rgb, profile.sharpen_amount), 0.0, 1.0)
    signed = rgb * 2.0 - 1.0
    return jpegcodec.encode(imageops.to_unsigned_range(signed),
                            profile.quant_luma, profile.quant_chroma)


def simulate_camera(scene: np.ndarray, profile: CameraProfile) -> np.ndarray:
    """Develop a scene through the profile's pipeline; in/out are in [-1, 1]."""
    data = develop_jpeg_bytes(scene, profile)
    return imageops.to_signed_range(jpegcodec.decode(data))
