"""Deterministic image primitives shared by the whole toolbox.

Images are float arrays of shape (H, W, 3) with values in [-1, 1]; all
functions are pure and hold no state.
"""

from __future__ import annotations

import numpy as np

# Third-order finite-difference taps, applied at offsets [-2, -1, 0, +1].
THIRD_DERIV_KERNEL = np.array([-1.0, 3.0, -3.0, 1.0])
THIRD_DERIV_OFFSETS = (-2, -1, 0, 1)

PSNR_CAP_DB = 99.0
SPECTRUM_EPS = 1e-8


class ShapeError(ValueError):
    """Raised when an image argument has the wrong shape."""


class ParameterError(ValueError):
    """Raised when a scalar argument is out of its valid range."""


def _check_image(x: np.ndarray, name: str = "image") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ShapeError(f"{name} must have shape (H, W, 3), got {x.shape}")
    return x


def to_signed_range(raw: np.ndarray) -> np.ndarray:
    """Map an 8-bit image (0..255) to the signed float range [-1, 1]."""
    raw = _check_image(raw, "raw")
    return np.asarray(raw, dtype=np.float64) / 127.5 - 1.0


def to_unsigned_range(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_signed_range`; rounds to uint8 levels."""
    x = _check_image(x)
    levels = np.rint((np.asarray(x, dtype=np.float64) + 1.0) * 127.5)
    return np.clip(levels, 0, 255).astype(np.uint8)


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Normalized 3-tap Gaussian, the fixed pre-filter support."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    taps = np.exp(-np.arange(-1.0, 2.0) ** 2 / (2.0 * sigma * sigma))
    return taps / taps.sum()


def _conv1d_axis(x: np.ndarray, taps: np.ndarray, offsets, axis: int) -> np.ndarray:
    """Correlate `x` with `taps` placed at integer `offsets` along `axis`,
    replicating the border so the output keeps the input shape."""
    lo, hi = -min(offsets), max(offsets)
    pad = [(0, 0)] * x.ndim
    pad[axis] = (lo, hi)
    xp = np.pad(x, pad, mode="edge")
    out = np.zeros_like(x, dtype=np.float64)
    n = x.shape[axis]
    for tap, off in zip(taps, offsets):
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(lo + off, lo + off + n)
        out += tap * xp[tuple(sl)]
    return out


def gaussian_prefilter(x: np.ndarray, sigma: float = 0.4) -> np.ndarray:
    """Per-channel 3x3 Gaussian smoothing with replicate borders."""
    x = _check_image(x)
    k = gaussian_kernel_1d(sigma)
    out = _conv1d_axis(np.asarray(x, dtype=np.float64), k, (-1, 0, 1), axis=1)
    out = _conv1d_axis(out, k, (-1, 0, 1), axis=0)
    return np.clip(out, -1.0, 1.0)


def extract_residuals(x: np.ndarray) -> np.ndarray:
    """Stack the color channels with their third-order derivatives.

    Returns (H, W, 9): channels 0-2 are the input, 3-5 the horizontal
    third derivatives and 6-8 the vertical ones, replicate-padded so the
    spatial size is preserved.
    """
    x = _check_image(x)
    xf = np.asarray(x, dtype=np.float64)
    horiz = _conv1d_axis(xf, THIRD_DERIV_KERNEL, THIRD_DERIV_OFFSETS, axis=1)
    vert = _conv1d_axis(xf, THIRD_DERIV_KERNEL, THIRD_DERIV_OFFSETS, axis=0)
    return np.concatenate([xf, horiz, vert], axis=2)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB on the 0-255 scale (peak 255, capped at 99 dB)."""
    a = _check_image(a, "a")
    b = _check_image(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = (np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) * 127.5
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(255.0 ** 2 / mse)))


def log_spectrum(x: np.ndarray) -> np.ndarray:
    """Log magnitude of the centered 2-D DFT of the luminance channel."""
    x = _check_image(x)
    lum = np.asarray(x, dtype=np.float64).mean(axis=2)
    mag = np.abs(np.fft.fftshift(np.fft.fft2(lum)))
    return np.log(mag + SPECTRUM_EPS)


def sample_patches(image: np.ndarray, n: int, size: int, seed: int) -> list[np.ndarray]:
    """Extract `n` random size x size patches, deterministic per seed."""
    image = _check_image(image)
    h, w = image.shape[:2]
    if h < size or w < size:
        raise ParameterError(f"image {h}x{w} smaller than patch size {size}")
    rng = np.random.default_rng(seed)
    patches = []
    for _ in range(n):
        i = int(rng.integers(0, h - size + 1))
        j = int(rng.integers(0, w - size + 1))
        patches.append(image[i:i + size, j:j + size].copy())
    return patches
