"""Desk-scale experiment orchestration.

One experiment run lives in its own directory and chains: data synthesis,
embedder pretraining, anchor computation, attack training (full plus the
two ablations), attack application, and defender-side evaluation. Stages
are cached behind digest-checked marker files, so an interrupted run
resumes instead of restarting, while a changed config recomputes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import evaluation, fileio
from .attack import apply_attack
from .losses import AnchorProfile, LossWeights
from .networks import (build_classifier, build_discriminator, build_embedder,
                       build_generator, load_checkpoint, save_checkpoint)
from .pipelines import (CameraProfile, GanSurrogateConfig, build_manifest,
                        default_profiles, make_synthetic, render_scene)
from .pipelines.camera import develop_jpeg_bytes
from .pipelines.manifest import DatasetManifest
from .seeding import derive_seed, seeded_rng
from .training import TrainConfig, TrainingRunRecord, train_embedder, train_spoc

log = logging.getLogger("camforge")

ABLATIONS = ("full", "only-embedder", "only-discriminator")


def ablation_weights(weights: LossWeights, mode: str) -> LossWeights:
    """Map an ablation name to the corresponding weight zeroing."""
    if mode == "full":
        return weights
    if mode == "only-embedder":
        return replace(weights, lambda_a=0.0)
    if mode == "only-discriminator":
        return replace(weights, lambda_e=0.0)
    raise ValueError(f"unknown ablation {mode!r}")


@dataclass(frozen=True)
class DeskScale:
    """Dataset and schedule sizes for the laptop-scale experiment."""
    scene_size: int = 128
    images_per_model: int = 45
    split_ratio: float = 40 / 45
    synthetic_train: int = 600
    synthetic_test: int = 500
    embedder_steps: int = 400
    embedder_batch: int = 48
    embedder_lr: float = 1e-3
    anchor_patches: int = 240
    classifier_steps: int = 900
    detector_patches_per_class: int = 100
    detector_synthetic: int = 300
    threshold_patches: int = 300
    eval_patches_per_class: int = 167


@dataclass
class ExperimentConfig:
    run_dir: str
    seed: int = 0
    target_model: str = "vivid-rggb"
    ablations: tuple = ABLATIONS
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        patch_size=64, iterations=3000))
    profiles: list = field(default_factory=default_profiles)
    surrogate: GanSurrogateConfig = field(default_factory=lambda: GanSurrogateConfig(
        base_resolution=32, upsample_factor=2,
        upsample_mode="transposed-conv-fixed", texture_seed=11))
    scale: DeskScale = field(default_factory=DeskScale)
    perceptual_kind: str = "frozen-random"

    def validate(self) -> "ExperimentConfig":
        ids = [p.model_id for p in self.profiles]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate profile ids: {ids}")
        if self.target_model not in ids:
            raise ValueError(
                f"target model {self.target_model!r} not among profiles {ids}")
        for mode in self.ablations:
            ablation_weights(self.train.weights, mode)
        self.train.validate()
        self.surrogate.validate(self.train.patch_size)
        return self

    def resolved(self) -> dict:
        return {
            "seed": self.seed,
            "target_model": self.target_model,
            "ablations": list(self.ablations),
            "train": replace(self.train, seed=self.seed).to_dict(),
            "profiles": [p.to_dict() for p in self.profiles],
            "surrogate": dataclasses.asdict(self.surrogate),
            "scale": dataclasses.asdict(self.scale),
            "perceptual_kind": self.perceptual_kind,
        }

    def digest(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict, run_dir) -> "ExperimentConfig":
        cfg = cls(run_dir=str(run_dir))
        if "seed" in d:
            cfg.seed = int(d["seed"])
        if "target_model" in d:
            cfg.target_model = d["target_model"]
        if "ablations" in d:
            cfg.ablations = tuple(d["ablations"])
        if "train" in d:
            cfg.train = TrainConfig.from_dict(d["train"])
        if "profiles" in d:
            cfg.profiles = [CameraProfile.from_dict(p) for p in d["profiles"]]
        if "surrogate" in d:
            cfg.surrogate = GanSurrogateConfig(**d["surrogate"])
        if "scale" in d:
            cfg.scale = DeskScale(**d["scale"])
        if "perceptual_kind" in d:
            cfg.perceptual_kind = d["perceptual_kind"]
        return cfg.validate()


class ExperimentRun:
    """Stage-cached execution of one experiment configuration."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg.validate()
        self.root = Path(cfg.run_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "resolved_config.json").write_text(
            json.dumps(cfg.resolved(), indent=2, sort_keys=True))

    # -- stage plumbing ----------------------------------------------------
    def _marker(self, stage: str) -> Path:
        return self.root / f"{stage}.done.json"

    def _fresh(self, stage: str) -> bool:
        m = self._marker(stage)
        if not m.exists():
            return False
        try:
            return json.loads(m.read_text())["config_digest"] == self.cfg.digest()
        except (json.JSONDecodeError, KeyError):
            return False

    def _finish(self, stage: str, payload: dict | None = None):
        self._marker(stage).write_text(json.dumps(
            {"config_digest": self.cfg.digest(), **(payload or {})}, indent=2))

    def _stage(self, stage: str, fn):
        if self._fresh(stage):
            log.info("[%s] cached", stage)
            return
        t0 = time.perf_counter()
        log.info("[%s] start", stage)
        payload = fn()
        self._finish(stage, payload)
        log.info("[%s] done in %.1fs", stage, time.perf_counter() - t0)

    # -- data --------------------------------------------------------------
    def stage_data(self):
        def run():
            sc = self.cfg.scale
            real_dir = self.root / "data" / "real"
            syn_dir = self.root / "data" / "synthetic"
            sources = {}
            for profile in self.cfg.profiles:
                pdir = real_dir / profile.model_id
                pdir.mkdir(parents=True, exist_ok=True)
                profile.save_json(pdir / "profile.json")
                paths = []
                for i in range(sc.images_per_model):
                    scene = render_scene(
                        derive_seed("scene", self.cfg.seed, profile.model_id, i),
                        sc.scene_size)
                    data = develop_jpeg_bytes(scene, profile)
                    p = pdir / f"{profile.model_id}_{i:04d}.jpg"
                    p.write_bytes(data)
                    paths.append(str(p))
                sources[profile.model_id] = paths
            real_manifest = build_manifest(sources, sc.split_ratio, self.cfg.seed)
            real_manifest.save_json(self.root / "data" / "real_manifest.json")

            syn_sources = {}
            for split, count in (("train", sc.synthetic_train), ("test", sc.synthetic_test)):
                sdir = syn_dir / split
                sdir.mkdir(parents=True, exist_ok=True)
                paths = []
                for i in range(count):
                    img = make_synthetic(
                        self.cfg.surrogate,
                        derive_seed("synthetic", self.cfg.seed, split, i))
                    p = sdir / f"synthetic_{split}_{i:05d}.png"
                    fileio.save_image_png(img, p)
                    paths.append(str(p))
                syn_sources[split] = paths
            syn_manifest = DatasetManifest(
                entries=[type(real_manifest.entries[0])(p, "synthetic", split)
                         for split, paths in syn_sources.items() for p in paths],
                seed=self.cfg.seed)
            syn_manifest.save_json(self.root / "data" / "synthetic_manifest.json")
            return {"real_images": sum(len(v) for v in sources.values()),
                    "synthetic_images": sc.synthetic_train + sc.synthetic_test}
        self._stage("data", run)

    # -- data loading helpers ---------------------------------------------
    def real_manifest(self) -> DatasetManifest:
        return DatasetManifest.load_json(self.root / "data" / "real_manifest.json")

    def synthetic_manifest(self) -> DatasetManifest:
        return DatasetManifest.load_json(self.root / "data" / "synthetic_manifest.json")

    def load_real(self, split: str) -> dict:
        man = self.real_manifest()
        return {label: [fileio.load_image(p) for p in man.paths(label, split)]
                for label in man.labels()}

    def load_synthetic(self, split: str) -> list:
        return [fileio.load_image(p)
                for p in self.synthetic_manifest().paths("synthetic", split)]

    def _real_patches(self, images: dict, label: str, n: int, tag: str) -> list:
        """Deterministic patch draws from one class's image pool."""
        from .imageops import sample_patches

        pool = images[label]
        rng = seeded_rng("exp-patches", self.cfg.seed, tag, label)
        out = []
        per = -(-n // len(pool))
        for i, im in enumerate(pool):
            take = min(per, n - len(out))
            if take <= 0:
                break
            out.extend(sample_patches(im, take, self.cfg.train.patch_size,
                                      int(rng.integers(2 ** 62))))
        return out[:n]

    # -- training stages ----------------------------------------------------
    def stage_embedder(self):
        def run():
            sc = self.cfg.scale
            cfg = replace(self.cfg.train, seed=self.cfg.seed,
                          iterations=sc.embedder_steps,
                          embedder_batch=sc.embedder_batch, lr=sc.embedder_lr)
            train_images = self.load_real("train")
            train_embedder(train_images, cfg, out_dir=self.root / "checkpoints")
            return {"steps": sc.embedder_steps}
        self._stage("embedder", run)

    def _load_embedder(self):
        emb = build_embedder(self.cfg.seed)
        load_checkpoint(self.root / "checkpoints" / "embedder.ckpt", emb)
        emb.eval()
        return emb

    def stage_anchor(self):
        def run():
            embedder = self._load_embedder()
            patches = self._real_patches(self.load_real("train"),
                                         self.cfg.target_model,
                                         self.cfg.scale.anchor_patches, "anchor")
            from .training import compute_anchor

            anchor = compute_anchor(embedder, patches, self.cfg.target_model)
            anchor.save_json(self.root / "checkpoints" / "anchor.json")
            return {"d_ref": anchor.d_ref}
        self._stage("anchor", run)

    def stage_spoc(self, mode: str):
        def run():
            out_dir = self.root / "checkpoints" / mode
            cfg = replace(self.cfg.train, seed=self.cfg.seed,
                          weights=ablation_weights(self.cfg.train.weights, mode))
            embedder = self._load_embedder()
            anchor = AnchorProfile.load_json(self.root / "checkpoints" / "anchor.json")
            real = self.load_real("train")[self.cfg.target_model]
            synthetic = self.load_synthetic("train")
            _, _, record = train_spoc(real, synthetic, embedder, anchor, cfg,
                                      out_dir=out_dir)
            from .training import loss_trace_sanity

            return {"iterations": cfg.iterations,
                    "trace_sanity": loss_trace_sanity(record)}
        self._stage(f"spoc-{mode}", run)

    def _load_generator(self, mode: str):
        gen = build_generator(self.cfg.seed)
        header = load_checkpoint(self.root / "checkpoints" / mode / "generator.ckpt", gen)
        gen.eval()
        return gen, header

    def stage_attack(self, mode: str):
        def run():
            gen, header = self._load_generator(mode)
            synthetic = self.load_synthetic("test")
            target = next(p for p in self.cfg.profiles
                          if p.model_id == self.cfg.target_model)
            out_dir = self.root / "attacked" / mode
            out_dir.mkdir(parents=True, exist_ok=True)

            attacked, report = apply_attack(
                gen, synthetic, generator_id=f"{mode}@{header['step']}")
            for i, im in enumerate(attacked):
                fileio.save_image_png(im, out_dir / f"attacked_{i:05d}.png")
            report.save(out_dir / "psnr.csv", out_dir / "attack_summary.json")

            # JPEG variant: the compressed file itself is the artifact of
            # record, written with the target model's quantization tables
            from . import imageops, jpegcodec

            jpeg_dir = self.root / "attacked" / f"{mode}-jpeg"
            jpeg_dir.mkdir(parents=True, exist_ok=True)
            for i, im in enumerate(attacked):
                data = jpegcodec.encode(imageops.to_unsigned_range(im),
                                        target.quant_luma, target.quant_chroma)
                (jpeg_dir / f"attacked_{i:05d}.jpg").write_bytes(data)
            report.save(jpeg_dir / "psnr.csv", jpeg_dir / "attack_summary.json")
            return {"mean_psnr": report.mean_psnr}
        self._stage(f"attack-{mode}", run)

    def load_attacked(self, mode: str, jpeg: bool = False) -> list:
        d = self.root / "attacked" / (f"{mode}-jpeg" if jpeg else mode)
        pattern = "attacked_*.jpg" if jpeg else "attacked_*.png"
        return [fileio.load_image(p) for p in sorted(d.glob(pattern))]

    # -- defender stages -----------------------------------------------------
    def stage_classifier(self):
        def run():
            sc = self.cfg.scale
            net, report = evaluation.train_camera_classifier(
                self.load_real("train"), self.load_real("test"),
                self.cfg.train.patch_size, seed=self.cfg.seed,
                steps=sc.classifier_steps, eval_per_class=sc.eval_patches_per_class)
            save_checkpoint(self.root / "checkpoints" / "classifier.ckpt", net,
                            {"network": "classifier", **report})
            (self.root / "reports").mkdir(exist_ok=True)
            (self.root / "reports" / "classifier.json").write_text(
                json.dumps(report, indent=2))
            return report
        self._stage("classifier", run)

    def _load_classifier(self):
        report = json.loads((self.root / "reports" / "classifier.json").read_text())
        net = build_classifier(len(report["classes"]), self.cfg.seed)
        load_checkpoint(self.root / "checkpoints" / "classifier.ckpt", net)
        net.eval()
        return net, report

    def stage_detector(self):
        def run():
            sc = self.cfg.scale
            train_real = self.load_real("train")
            real_patches = []
            for label in sorted(train_real):
                real_patches.extend(self._real_patches(
                    train_real, label, sc.detector_patches_per_class, "detector"))
            syn_train = self.load_synthetic("train")[:sc.detector_synthetic]
            detector = evaluation.train_gan_detector(real_patches, syn_train,
                                                     "spectrum", seed=self.cfg.seed)

            test_real = self.load_real("test")
            val_patches = []
            for label in sorted(test_real):
                val_patches.extend(self._real_patches(
                    test_real, label, sc.threshold_patches // len(test_real),
                    "threshold"))
            threshold = evaluation.calibrate_threshold(detector, val_patches)
            syn_test = self.load_synthetic("test")
            auc = evaluation.detector_auc(detector, val_patches, syn_test)
            before = evaluation.evaluate_tpr(detector, syn_test, threshold)

            import pickle
            with open(self.root / "checkpoints" / "spectrum_detector.pkl", "wb") as fh:
                pickle.dump(detector.model, fh)
            payload = {"auc": auc, "threshold": threshold,
                       "tpr_before": before.tpr, "n": before.n_images,
                       "n_flagged": before.n_flagged}
            (self.root / "reports" / "detector.json").write_text(
                json.dumps(payload, indent=2))
            return payload
        self._stage("detector", run)

    def _load_detector(self):
        import pickle

        with open(self.root / "checkpoints" / "spectrum_detector.pkl", "rb") as fh:
            model = pickle.load(fh)
        payload = json.loads((self.root / "reports" / "detector.json").read_text())
        return evaluation.SpectrumDetector(model), payload

    def stage_eval(self, mode: str):
        def run():
            net, clf_report = self._load_classifier()
            classes = clf_report["classes"]
            detector, det_payload = self._load_detector()
            syn_test = self.load_synthetic("test")
            attacked = self.load_attacked(mode)
            attacked_jpeg = self.load_attacked(mode, jpeg=True)

            sar_before = evaluation.evaluate_sar(
                net, classes, syn_test, self.cfg.target_model,
                classifier_id="camera-classifier/unattacked")
            sar_after = evaluation.evaluate_sar(
                net, classes, attacked, self.cfg.target_model,
                classifier_id=f"camera-classifier/attacked-{mode}")
            sar_jpeg = evaluation.evaluate_sar(
                net, classes, attacked_jpeg, self.cfg.target_model,
                classifier_id=f"camera-classifier/attacked-{mode}-jpeg")
            tpr_after = evaluation.evaluate_tpr(detector, attacked,
                                                det_payload["threshold"])
            summary = json.loads((self.root / "attacked" / mode /
                                  "attack_summary.json").read_text())

            results = {
                "mode": mode,
                "sar_unattacked": sar_before.sar,
                "sar_attacked": sar_after.sar,
                "sar_attacked_jpeg": sar_jpeg.sar,
                "counts": {
                    "unattacked": [sar_before.n_attributed_to_target, sar_before.n_images],
                    "attacked": [sar_after.n_attributed_to_target, sar_after.n_images],
                    "jpeg": [sar_jpeg.n_attributed_to_target, sar_jpeg.n_images],
                    "tpr_after": [tpr_after.n_flagged, tpr_after.n_images],
                },
                "tpr_before": det_payload["tpr_before"],
                "tpr_after": tpr_after.tpr,
                "mean_psnr": summary["mean_psnr"],
            }
            (self.root / "reports" / f"eval-{mode}.json").write_text(
                json.dumps(results, indent=2))

            report_dir = self.root / "reports" / mode
            record = TrainingRunRecord.load_csv(
                self.root / "checkpoints" / mode / "losses.csv")
            from . import imageops

            evaluation.emit_report(
                report_dir,
                sar_results=[sar_before, sar_after, sar_jpeg],
                detector_results=[("spectrum-before", evaluation.DetectorResult(
                    "spectrum", det_payload["threshold"], det_payload["n"],
                    det_payload["n_flagged"])),
                    ("spectrum-after", tpr_after)],
                psnr_rows=[],
                loss_record=record,
                spectra=[("synthetic", imageops.log_spectrum(syn_test[0])),
                         ("attacked", imageops.log_spectrum(attacked[0]))],
            )
            return results
        self._stage(f"eval-{mode}", run)

    # -- driving -------------------------------------------------------------
    def run_all(self):
        self.stage_data()
        self.stage_embedder()
        self.stage_anchor()
        self.stage_classifier()
        self.stage_detector()
        for mode in self.cfg.ablations:
            self.stage_spoc(mode)
            self.stage_attack(mode)
            self.stage_eval(mode)
        return self.summary()

    def summary(self) -> dict:
        out = {"config_digest": self.cfg.digest(), "seed": self.cfg.seed,
               "target_model": self.cfg.target_model}
        clf = self.root / "reports" / "classifier.json"
        if clf.exists():
            out["classifier"] = json.loads(clf.read_text())
        det = self.root / "reports" / "detector.json"
        if det.exists():
            out["detector"] = json.loads(det.read_text())
        out["ablations"] = {}
        for mode in self.cfg.ablations:
            f = self.root / "reports" / f"eval-{mode}.json"
            if f.exists():
                out["ablations"][mode] = json.loads(f.read_text())
        (self.root / "summary.json").write_text(json.dumps(out, indent=2))
        return out


def reproduce_desk(run_dir, seed: int = 0, ablations=ABLATIONS,
                   overrides: dict | None = None) -> dict:
    """Run the whole desk-scale experiment chain into `run_dir`."""
    cfg = ExperimentConfig(run_dir=str(run_dir), seed=seed, ablations=tuple(ablations))
    if overrides:
        cfg = ExperimentConfig.from_dict({**cfg.resolved(), **overrides}, run_dir)
    cfg.train = replace(cfg.train, seed=seed)
    return ExperimentRun(cfg).run_all()
