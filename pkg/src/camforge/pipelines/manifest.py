"""Dataset manifests: deterministic train/test splits at the source-image
level, so patches from one image never straddle splits."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..imageops import ParameterError
from ..seeding import seeded_rng


class DataError(ValueError):
    """Raised on empty or inconsistent dataset inputs."""


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str      # camera model_id or "synthetic"
    split: str      # "train" | "test"


@dataclass
class DatasetManifest:
    entries: list
    seed: int

    def paths(self, label: str | None = None, split: str | None = None) -> list[str]:
        return [e.path for e in self.entries
                if (label is None or e.label == label)
                and (split is None or e.split == split)]

    def labels(self) -> list[str]:
        seen = []
        for e in self.entries:
            if e.label not in seen:
                seen.append(e.label)
        return seen

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "entries": [{"path": e.path, "label": e.label, "split": e.split}
                        for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(
            entries=[ManifestEntry(e["path"], e["label"], e["split"])
                     for e in d["entries"]],
            seed=int(d["seed"]),
        )

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load_json(cls, path) -> "DatasetManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _resolve_source(source) -> list[str]:
    if isinstance(source, (str, Path)):
        p = Path(source)
        if not p.is_dir():
            raise DataError(f"source directory {p} does not exist")
        files = sorted(str(f) for f in p.iterdir()
                       if f.suffix.lower() in (".png", ".jpg", ".jpeg"))
    else:
        files = [str(f) for f in source]
    if not files:
        raise DataError("source contributed no files")
    return files


def build_manifest(sources: dict, split_ratio: float, seed: int) -> DatasetManifest:
    """Split each labeled source into train/test at `split_ratio`.

    `sources` maps label -> directory or list of file paths. The shuffle and
    split are deterministic per seed; the ratio is honored within one item.
    """
    if not sources:
        raise DataError("at least one source is required")
    if not 0.0 < split_ratio < 1.0:
        raise ParameterError(f"split_ratio must be in (0, 1), got {split_ratio}")
    rng = seeded_rng("camforge-manifest", seed)
    entries = []
    for label in sorted(sources):
        files = _resolve_source(sources[label])
        order = rng.permutation(len(files))
        n_train = int(round(split_ratio * len(files)))
        for rank, idx in enumerate(order):
            split = "train" if rank < n_train else "test"
            entries.append(ManifestEntry(files[idx], label, split))
    return DatasetManifest(entries=entries, seed=seed)
