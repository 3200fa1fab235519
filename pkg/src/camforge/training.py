"""Training procedures: embedder pretraining on many camera models, anchor
computation for a target model, and the alternating generator/discriminator
loop with per-step loss logging and checkpointing.

Every sampling decision flows through one seeded torch.Generator, so a run
is a pure function of (data, config) under single-threaded execution.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import losses as losses_mod
from . import networks
from .losses import AnchorProfile, LossWeights, PerceptualFeatures
from .networks import (build_discriminator, build_embedder, build_generator,
                       checkpoint_digest, save_checkpoint, spectral_updates,
                       to_tensor)
from .pipelines.manifest import DataError
from .seeding import derive_seed


class TrainingDiverged(RuntimeError):
    """A loss term left the finite range; names the term and step."""

    def __init__(self, term: str, step: int, value: float):
        super().__init__(f"non-finite {term} ({value}) at step {step}")
        self.term = term
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    gen_batch: int = 10
    disc_batch: int = 30
    iterations: int = 50000
    embedder_batch: int = 80
    patch_size: int = 256
    seed: int = 0
    checkpoint_every: int = 500

    def validate(self) -> "TrainConfig":
        self.weights.validate()
        if min(self.gen_batch, self.disc_batch, self.embedder_batch) < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        for b in (self.adam_beta1, self.adam_beta2):
            if not 0.0 < b < 1.0:
                raise ValueError("ADAM moments must lie in (0, 1)")
        if self.iterations < 0 or self.checkpoint_every < 1:
            raise ValueError("iteration counts must be sensible")
        return self

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "lr", "adam_beta1", "adam_beta2", "gen_batch", "disc_batch",
            "iterations", "embedder_batch", "patch_size", "seed", "checkpoint_every")}
        d["weights"] = {
            "lambda_e": self.weights.lambda_e, "lambda_a": self.weights.lambda_a,
            "lambda_p": self.weights.lambda_p, "lambda_f": self.weights.lambda_f,
            "margin_m": self.weights.margin_m}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        w = d.pop("weights", {})
        return cls(weights=LossWeights(**w), **d).validate()


def desk_config(seed: int = 0) -> TrainConfig:
    """Laptop-scale defaults: 64-pixel patches, 3000 iterations."""
    return TrainConfig(patch_size=64, iterations=3000, seed=seed).validate()


RECORD_COLUMNS = ("step", "l_rec", "l_per", "l_dst", "l_fm", "l_adv", "l_d",
                  "psnr", "wall_time")


@dataclass
class TrainingRunRecord:
    rows: list = field(default_factory=list)

    def append(self, step: int, scalars: dict, wall_time: float):
        for name, v in scalars.items():
            if not np.isfinite(v):
                raise TrainingDiverged(name, step, v)
        self.rows.append({"step": step, **scalars, "wall_time": wall_time})

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def save_csv(self, path):
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RECORD_COLUMNS)
            for r in self.rows:
                writer.writerow([repr(r.get(c, "")) if not isinstance(r.get(c), str)
                                 else r[c] for c in RECORD_COLUMNS])

    @staticmethod
    def load_csv(path) -> "TrainingRunRecord":
        rec = TrainingRunRecord()
        with open(Path(path), newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                rec.rows.append({"step": int(row["step"]),
                                 **{k: float(row[k]) for k in RECORD_COLUMNS
                                    if k != "step"}})
        return rec


def loss_trace_sanity(record: "TrainingRunRecord", window: int = 500) -> dict:
    """Mode-collapse tripwire, reported rather than asserted: over each
    window, the adversarial losses must stay finite and neither may sit at
    exactly zero for the whole window."""
    report = {"windows": 0, "collapsed_windows": [], "finite": True}
    adv = record.column("l_adv")
    d = record.column("l_d")
    for start in range(0, len(adv), window):
        chunk_a = adv[start:start + window]
        chunk_d = d[start:start + window]
        report["windows"] += 1
        if not (np.all(np.isfinite(chunk_a)) and np.all(np.isfinite(chunk_d))):
            report["finite"] = False
        if all(v == 0.0 for v in chunk_a) or all(v == 0.0 for v in chunk_d):
            report["collapsed_windows"].append(start)
    return report


class PatchSampler:
    """Deterministic random patches from a pool of images.

    Images at least as large as the patch contribute random offsets; the
    sampling stream is owned by the caller's torch.Generator.
    """

    def __init__(self, images, patch_size: int):
        if not images:
            raise DataError("empty image pool")
        self.patch_size = patch_size
        self.images = []
        for im in images:
            t = to_tensor(im) if isinstance(im, np.ndarray) else im.float()
            if t.shape[-1] < patch_size or t.shape[-2] < patch_size:
                raise DataError(
                    f"image {tuple(t.shape[-2:])} smaller than patch {patch_size}")
            self.images.append(t)

    def batch(self, n: int, gen: torch.Generator) -> torch.Tensor:
        s = self.patch_size
        out = torch.empty(n, 3, s, s)
        for b in range(n):
            idx = int(torch.randint(len(self.images), (1,), generator=gen))
            im = self.images[idx]
            dy = int(torch.randint(im.shape[-2] - s + 1, (1,), generator=gen))
            dx = int(torch.randint(im.shape[-1] - s + 1, (1,), generator=gen))
            out[b] = im[:, dy:dy + s, dx:dx + s]
        return out


def mean_batch_psnr(x: torch.Tensor, y: torch.Tensor) -> float:
    """Mean per-image PSNR on the 0-255 scale, signed-range inputs."""
    mse = torch.mean((x.detach() - y.detach()) ** 2, dim=(1, 2, 3))
    db = 10.0 * torch.log10(4.0 / mse.clamp_min(1e-12))
    return float(db.clamp(max=99.0).mean())


def train_embedder(class_images: dict, cfg: TrainConfig, out_dir=None) -> networks.Embedder:
    """Pretrain the embedder with batch-hard triplets over camera models.

    `class_images` maps model_id -> list of signed-range images (train split).
    """
    cfg.validate()
    classes = sorted(class_images)
    if len(classes) < 2:
        raise DataError("embedder pretraining needs at least 2 model classes")
    for cid in classes:
        if len(class_images[cid]) < 2:
            raise DataError(f"class {cid!r} has fewer than 2 images")
    samplers = {cid: PatchSampler(class_images[cid], cfg.patch_size) for cid in classes}

    embedder = build_embedder(cfg.seed)
    opt = torch.optim.Adam(embedder.parameters(), lr=cfg.lr, betas=(0.9, 0.999))
    gen = torch.Generator().manual_seed(derive_seed("train-embedder", cfg.seed))

    out_dir = Path(out_dir) if out_dir is not None else None
    base_labels = torch.arange(cfg.embedder_batch) % len(classes)
    for step in range(cfg.iterations):
        # balanced class composition, shuffled; guarantees mineable triplets
        label_idx = base_labels[torch.randperm(cfg.embedder_batch, generator=gen)]
        patches = torch.cat([samplers[classes[int(i)]].batch(1, gen) for i in label_idx])
        with spectral_updates(embedder):
            emb, _ = embedder(patches)
        loss = losses_mod.batch_all_triplet_loss(emb, label_idx)
        if not torch.isfinite(loss):
            raise TrainingDiverged("triplet", step, float(loss))
        opt.zero_grad()
        loss.backward()
        opt.step()
        if out_dir is not None and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out_dir / "embedder.ckpt", embedder,
                            {"network": "embedder", "step": step + 1,
                             "classes": classes})
    if out_dir is not None:
        save_checkpoint(out_dir / "embedder.ckpt", embedder,
                        {"network": "embedder", "step": cfg.iterations,
                         "classes": classes})
    return embedder


def compute_anchor(embedder: networks.Embedder, real_patches, model_id: str,
                   batch_size: int = 32) -> AnchorProfile:
    """Anchor = mean embedding of real patches; d_ref = mean L1 to it."""
    if len(real_patches) == 0:
        raise DataError("anchor computation needs at least one real patch")
    embs = []
    with torch.no_grad():
        for i in range(0, len(real_patches), batch_size):
            chunk = real_patches[i:i + batch_size]
            batch = torch.stack([to_tensor(p) if isinstance(p, np.ndarray) else p
                                 for p in chunk])
            embs.append(embedder(batch)[0])
    embs = torch.cat(embs).double()
    e_m = embs.mean(dim=0)
    d_ref = float(torch.sum(torch.abs(embs - e_m), dim=1).mean())
    return AnchorProfile(e_m.numpy(), d_ref, model_id).validate()


def train_spoc(real_images, synthetic_images, embedder: networks.Embedder,
               anchor: AnchorProfile, cfg: TrainConfig, out_dir=None,
               probe=None, probe_every: int = 0):
    """Alternating discriminator/generator training against one target model.

    Returns (generator, discriminator, record). The embedder stays frozen;
    per iteration the discriminator updates first (15 real / 7 synthetic /
    8 rewritten patches), then the generator (10 synthetic patches).
    An optional probe(step, generator) callback runs every `probe_every`
    steps outside the sampling stream, for monitoring only.
    """
    cfg.validate()
    real_sampler = PatchSampler(real_images, cfg.patch_size)
    syn_sampler = PatchSampler(synthetic_images, cfg.patch_size)

    generator = build_generator(cfg.seed)
    with torch.no_grad():
        generator.convs[-1].weight.zero_()   # start as near-identity rewriter
    discriminator = build_discriminator(cfg.seed)
    perceptual = PerceptualFeatures(seed=cfg.seed)

    embedder_digest = checkpoint_digest(embedder)
    for p in embedder.parameters():
        p.requires_grad_(False)
    embedder.eval()

    opt_g = torch.optim.Adam(generator.parameters(), lr=cfg.lr,
                             betas=(cfg.adam_beta1, cfg.adam_beta2))
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=cfg.lr,
                             betas=(cfg.adam_beta1, cfg.adam_beta2))
    gen = torch.Generator().manual_seed(derive_seed("train-spoc", cfg.seed))

    n_real = cfg.disc_batch // 2
    n_syn = (cfg.disc_batch - n_real) // 2
    n_gen = cfg.disc_batch - n_real - n_syn

    record = TrainingRunRecord()
    out_dir = Path(out_dir) if out_dir is not None else None
    w = cfg.weights
    t_start = time.perf_counter()

    def checkpoint(step):
        if out_dir is None:
            return
        meta = {"step": step, "config": cfg.to_dict(), "target": anchor.model_id}
        save_checkpoint(out_dir / "generator.ckpt", generator,
                        {"network": "generator", **meta})
        save_checkpoint(out_dir / "discriminator.ckpt", discriminator,
                        {"network": "discriminator", **meta})

    for step in range(cfg.iterations):
        x = syn_sampler.batch(cfg.gen_batch, gen)
        real_d = real_sampler.batch(n_real, gen)
        syn_d = syn_sampler.batch(n_syn, gen)

        with spectral_updates(generator):
            y = generator(x)

        # -- discriminator step -------------------------------------------
        with spectral_updates(discriminator):
            logits_real = discriminator(real_d)
            logits_syn = discriminator(syn_d)
            logits_gen = discriminator(y[:n_gen].detach())
        l_d = losses_mod.discriminator_loss(logits_real, logits_syn, logits_gen)
        opt_d.zero_grad()
        l_d.backward()
        opt_d.step()

        # -- generator step ------------------------------------------------
        for p in discriminator.parameters():
            p.requires_grad_(False)
        l_adv = losses_mod.adversarial_loss(discriminator(y))
        emb_y, feats_y = embedder(y)
        l_dst = losses_mod.embedding_distance_loss(emb_y, anchor, w.margin_m)
        with torch.no_grad():
            _, feats_real = embedder(real_d)
        l_fm = losses_mod.feature_matching_loss(feats_y, feats_real)
        l_rec = torch.mean(torch.abs(x - y))
        l_per = sum(torch.mean(torch.abs(fx - fy))
                    for fx, fy in zip(perceptual(x), perceptual(y)))
        l_cnt = l_rec + w.lambda_p * l_per
        total = losses_mod.generator_total_loss(l_cnt, l_dst, l_fm, l_adv, w)
        opt_g.zero_grad()
        total.backward()
        opt_g.step()
        for p in discriminator.parameters():
            p.requires_grad_(True)

        record.append(step, {
            "l_rec": l_rec.item(), "l_per": float(l_per.detach()),
            "l_dst": l_dst.item(), "l_fm": l_fm.item(),
            "l_adv": l_adv.item(), "l_d": l_d.item(),
            "psnr": mean_batch_psnr(x, y.detach()),
        }, wall_time=time.perf_counter() - t_start)

        if (step + 1) % cfg.checkpoint_every == 0:
            checkpoint(step + 1)
        if probe is not None and probe_every and (step + 1) % probe_every == 0:
            with torch.no_grad():
                generator.eval()
                probe(step + 1, generator)
                generator.train()

    checkpoint(cfg.iterations)
    if out_dir is not None:
        record.save_csv(out_dir / "losses.csv")
    if checkpoint_digest(embedder) != embedder_digest:
        raise RuntimeError("embedder parameters changed during attack training")
    return generator, discriminator, record
