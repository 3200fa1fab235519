"""Apply a trained generator to synthetic images: batch rewriting with
per-image PSNR accounting and optional JPEG compression using the target
model's quantization tables."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import imageops, jpegcodec
from .networks import Generator, to_image, to_tensor
from .pipelines.manifest import DataError


@dataclass
class AttackReport:
    generator_id: str
    jpeg_applied: bool
    rows: list = field(default_factory=list)   # (name, psnr_db)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([p for _, p in self.rows]))

    @property
    def min_psnr(self) -> float:
        return float(np.min([p for _, p in self.rows]))

    @property
    def max_psnr(self) -> float:
        return float(np.max([p for _, p in self.rows]))

    def save(self, csv_path, summary_path=None):
        with open(Path(csv_path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image", "psnr_db"])
            for name, p in self.rows:
                writer.writerow([name, repr(float(p))])
        if summary_path is not None:
            Path(summary_path).write_text(json.dumps({
                "generator_id": self.generator_id,
                "jpeg_applied": self.jpeg_applied,
                "n_images": len(self.rows),
                "mean_psnr": self.mean_psnr,
                "min_psnr": self.min_psnr,
                "max_psnr": self.max_psnr,
            }, indent=2))


def apply_attack(generator: Generator, images, jpeg_tables=None,
                 generator_id: str = "", names=None, batch_size: int = 16):
    """Rewrite `images` through the generator; returns (outputs, report).

    PSNR is accounted before the optional JPEG stage, so the compressed
    variant stays comparable with the uncompressed one.
    """
    if len(images) == 0:
        raise DataError("no images to attack")
    names = names or [f"image_{i:05d}" for i in range(len(images))]
    generator.eval()
    report = AttackReport(generator_id=generator_id, jpeg_applied=jpeg_tables is not None)
    outputs = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            chunk = images[start:start + batch_size]
            batch = torch.stack([to_tensor(im) for im in chunk])
            rewritten = generator(batch)
            for i, im in enumerate(chunk):
                # snap to 8-bit levels so saved files reproduce the report PSNR
                out = imageops.to_signed_range(
                    imageops.to_unsigned_range(to_image(rewritten[i])))
                report.rows.append((names[start + i], imageops.psnr(im, out)))
                if jpeg_tables is not None:
                    out = jpegcodec.jpeg_roundtrip(out, *jpeg_tables)
                outputs.append(out)
    return outputs, report
