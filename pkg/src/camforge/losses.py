"""Training objectives, all pure differentiable functions of network outputs.

Probabilities never appear explicitly: every cross-entropy term is computed
from logits in the fused softplus form, so losses stay finite for logits of
any magnitude.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .imageops import ShapeError
from .networks import init_weights
from .pipelines.manifest import DataError

TRIPLET_MARGIN_PRETRAIN = 0.1
PERCEPTUAL_WIDTHS = (16, 32, 64)


@dataclass(frozen=True)
class LossWeights:
    lambda_e: float = 1.0
    lambda_a: float = 0.1
    lambda_p: float = 0.001
    lambda_f: float = 0.01
    margin_m: float = 0.01

    def validate(self) -> "LossWeights":
        for name in ("lambda_e", "lambda_a", "lambda_p", "lambda_f", "margin_m"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        return self


@dataclass
class AnchorProfile:
    """Target camera model in embedding space: anchor vector plus the mean
    distance of real images to it."""
    e_m: np.ndarray
    d_ref: float
    model_id: str

    def validate(self) -> "AnchorProfile":
        e = np.asarray(self.e_m, dtype=np.float64)
        if e.ndim != 1:
            raise ShapeError(f"anchor must be a vector, got shape {e.shape}")
        if not np.all(np.isfinite(e)):
            raise ValueError("anchor vector must be finite")
        if self.d_ref < 0:
            raise ValueError(f"d_ref must be >= 0, got {self.d_ref}")
        return self

    def save_json(self, path):
        Path(path).write_text(json.dumps({
            "model_id": self.model_id,
            "d_ref": self.d_ref,
            "e_m": np.asarray(self.e_m, dtype=float).tolist(),
        }, indent=2))

    @classmethod
    def load_json(cls, path) -> "AnchorProfile":
        d = json.loads(Path(path).read_text())
        return cls(np.asarray(d["e_m"], dtype=np.float64), float(d["d_ref"]),
                   d["model_id"]).validate()


class PerceptualFeatures(nn.Module):
    """Frozen feature extractor for the perceptual part of the content loss.

    The default is a fixed-seed random-weight network (three conv stages with
    2x downsampling), which keeps runs fully offline and deterministic; the
    kind string is recorded in experiment metadata.
    """

    def __init__(self, kind: str = "frozen-random", seed: int = 0):
        super().__init__()
        if kind != "frozen-random":
            raise ValueError(f"unknown perceptual feature kind {kind!r}")
        self.kind = kind
        widths = (3,) + PERCEPTUAL_WIDTHS
        self.convs = nn.ModuleList(
            [nn.Conv2d(widths[i], widths[i + 1], 3, padding=1, padding_mode="replicate")
             for i in range(3)])
        init_weights(self, ("perceptual", seed))
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        features = []
        h = x
        for conv in self.convs:
            h = F.avg_pool2d(F.relu(conv(h)), 2)
            features.append(h)
        return features


def content_loss(x: torch.Tensor, y: torch.Tensor, weights: LossWeights,
                 perceptual: PerceptualFeatures | None = None) -> torch.Tensor:
    """L1 reconstruction plus lambda_p-weighted perceptual distance."""
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    loss = torch.mean(torch.abs(x - y))
    if perceptual is not None and weights.lambda_p > 0:
        per = sum(torch.mean(torch.abs(fx - fy))
                  for fx, fy in zip(perceptual(x), perceptual(y)))
        loss = loss + weights.lambda_p * per
    return loss


def anchor_distances(embeddings: torch.Tensor, anchor: AnchorProfile) -> torch.Tensor:
    e_m = torch.as_tensor(np.asarray(anchor.e_m), dtype=embeddings.dtype,
                          device=embeddings.device)
    if embeddings.shape[-1] != e_m.shape[0]:
        raise ShapeError(
            f"embedding dim {embeddings.shape[-1]} != anchor dim {e_m.shape[0]}")
    return torch.sum(torch.abs(embeddings - e_m), dim=-1)


def embedding_distance_loss(embeddings: torch.Tensor, anchor: AnchorProfile,
                            margin: float) -> torch.Tensor:
    """Hinge on the L1 distance to the anchor: |d(x) - d_ref + m|_+ averaged."""
    d = anchor_distances(embeddings, anchor)
    return torch.mean(F.relu(d - anchor.d_ref + margin))


def feature_matching_loss(generated_features, real_features) -> torch.Tensor:
    """L1 between batch-mean embedder feature maps, summed over blocks."""
    total = None
    for fg, fr in zip(generated_features, real_features):
        term = torch.mean(torch.abs(fg.mean(dim=0) - fr.mean(dim=0)))
        total = term if total is None else total + term
    if total is None:
        raise DataError("no feature maps to match")
    return total


def adversarial_loss(generated_logits: torch.Tensor) -> torch.Tensor:
    """-log sigmoid(logit), averaged over the whole logit map and batch."""
    return torch.mean(F.softplus(-generated_logits))


def discriminator_loss(real_logits: torch.Tensor, synthetic_logits: torch.Tensor,
                       generated_logits: torch.Tensor) -> torch.Tensor:
    """Real images vs the pooled pair of fake sources (original + rewritten)."""
    real_term = torch.mean(F.softplus(-real_logits))
    fake_term = 0.5 * (torch.mean(F.softplus(generated_logits))
                       + torch.mean(F.softplus(synthetic_logits)))
    return real_term + fake_term


def generator_total_loss(content: torch.Tensor, distance: torch.Tensor,
                         feature_matching: torch.Tensor, adversarial: torch.Tensor,
                         weights: LossWeights) -> torch.Tensor:
    """Composite objective: content + lambda_e*(dst + lambda_f*fm) + lambda_a*adv."""
    embedding = distance + weights.lambda_f * feature_matching
    return content + weights.lambda_e * embedding + weights.lambda_a * adversarial


def triplet_loss(anchor_emb: torch.Tensor, positive_emb: torch.Tensor,
                 negative_emb: torch.Tensor, margin: float) -> torch.Tensor:
    """Hinge over L1 distances: |d(a,p) - d(a,n) + margin|_+ averaged."""
    if not (anchor_emb.shape == positive_emb.shape == negative_emb.shape):
        raise ShapeError("triplet embeddings must share a shape")
    d_ap = torch.sum(torch.abs(anchor_emb - positive_emb), dim=-1)
    d_an = torch.sum(torch.abs(anchor_emb - negative_emb), dim=-1)
    return torch.mean(F.relu(d_ap - d_an + margin))


def batch_all_triplet_loss(embeddings: torch.Tensor, labels: torch.Tensor,
                           margin: float = TRIPLET_MARGIN_PRETRAIN) -> torch.Tensor:
    """Hinge averaged over every valid (anchor, positive, negative) triplet.

    Denser and collapse-resistant compared to batch-hard mining; used for
    embedder pretraining at desk scale.
    """
    dist = torch.cdist(embeddings.unsqueeze(0), embeddings.unsqueeze(0), p=1).squeeze(0)
    same = labels.unsqueeze(0) == labels.unsqueeze(1)
    eye = torch.eye(len(labels), dtype=torch.bool, device=embeddings.device)
    pos = same & ~eye
    neg = ~same
    mask = pos.unsqueeze(2) & neg.unsqueeze(1)        # [anchor, positive, negative]
    if not bool(mask.any()):
        raise DataError("batch contains no valid triplet")
    hinge = F.relu(dist.unsqueeze(2) - dist.unsqueeze(1) + margin)
    return hinge[mask].mean()


def batch_hard_triplet_loss(embeddings: torch.Tensor, labels: torch.Tensor,
                            margin: float = TRIPLET_MARGIN_PRETRAIN) -> torch.Tensor:
    """Batch-hard mining: hardest positive and hardest negative per anchor.

    Anchors lacking either a positive or a negative in the batch are skipped;
    if every anchor is skipped the batch is unusable.
    """
    dist = torch.cdist(embeddings.unsqueeze(0), embeddings.unsqueeze(0), p=1).squeeze(0)
    same = labels.unsqueeze(0) == labels.unsqueeze(1)
    eye = torch.eye(len(labels), dtype=torch.bool, device=embeddings.device)
    pos_mask = same & ~eye
    neg_mask = ~same
    valid = pos_mask.any(dim=1) & neg_mask.any(dim=1)
    if not bool(valid.any()):
        raise DataError("batch contains no anchor with both a positive and a negative")
    neg_inf = torch.tensor(-torch.inf, dtype=dist.dtype)
    pos_inf = torch.tensor(torch.inf, dtype=dist.dtype)
    hardest_pos = torch.where(pos_mask, dist, neg_inf).amax(dim=1)
    hardest_neg = torch.where(neg_mask, dist, pos_inf).amin(dim=1)
    hinge = F.relu(hardest_pos[valid] - hardest_neg[valid] + margin)
    return hinge.mean()
