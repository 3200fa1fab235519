"""Image and spectrum file I/O: lossless PNG for images, PNG heatmaps and
CSV grids for spectra."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image

from . import imageops


def save_image_png(x: np.ndarray, path) -> None:
    """Write a signed-range image losslessly as 8-bit PNG."""
    Image.fromarray(imageops.to_unsigned_range(x)).save(Path(path), format="PNG")


def load_image(path) -> np.ndarray:
    """Load a PNG or JPEG file as a signed-range image.

    JPEG files go through the in-package decoder so loaded pixels match the
    camera pipeline's round-trip output bit for bit.
    """
    path = Path(path)
    if path.suffix.lower() in (".jpg", ".jpeg"):
        from . import jpegcodec

        return imageops.to_signed_range(jpegcodec.decode(path.read_bytes()))
    with Image.open(path) as im:
        raw = np.asarray(im.convert("RGB"))
    return imageops.to_signed_range(raw)


def save_image_jpeg_bytes(data: bytes, path) -> None:
    Path(path).write_bytes(data)


def save_spectrum_csv(spectrum: np.ndarray, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(spectrum, dtype=float):
            writer.writerow([repr(float(v)) for v in row])


def load_spectrum_csv(path) -> np.ndarray:
    with open(Path(path), newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)])


def save_spectrum_heatmap(spectrum: np.ndarray, path) -> None:
    """Render a spectrum as a grayscale PNG, max-normalized for display."""
    s = np.asarray(spectrum, dtype=np.float64)
    lo, hi = s.min(), s.max()
    norm = (s - lo) / (hi - lo) if hi > lo else np.zeros_like(s)
    Image.fromarray((norm * 255).astype(np.uint8), mode="L").save(Path(path), format="PNG")
