import csv

import numpy as np
import pytest
import torch

from camforge import evaluation, imageops
from camforge.evaluation import (DetectorResult, SarResult,
                                 calibrate_threshold, detector_auc,
                                 emit_report, evaluate_sar, evaluate_tpr,
                                 spectrum_peak_score, train_camera_classifier,
                                 train_gan_detector)
from camforge.imageops import ParameterError
from camforge.pipelines import GanSurrogateConfig, make_synthetic
from camforge.pipelines.manifest import DataError
from camforge.training import TrainingRunRecord

torch.set_num_threads(1)


def noise_images(n, seed=0, size=64):
    rng = np.random.default_rng(seed)
    return [np.clip(rng.normal(0, 0.2, (size, size, 3)), -1, 1) for _ in range(n)]


def surrogate_images(n, seed=0, mode="transposed-conv-fixed"):
    cfg = GanSurrogateConfig(32, 2, mode, texture_seed=3)
    return [make_synthetic(cfg, seed * 1000 + i) for i in range(n)]


class ConstantDetector:
    kind = "constant"

    def __init__(self, value):
        self.value = value

    def score(self, images):
        return np.full(len(images), self.value)


class TestSpectrumPeakScore:
    def test_white_noise_unbiased(self):
        scores = [spectrum_peak_score(im) for im in noise_images(100, seed=1)]
        mean, std = np.mean(scores), np.std(scores)
        assert abs(mean) < 3 * std / np.sqrt(len(scores))

    def test_checkerboard_upsampling_elevates(self):
        noise = [spectrum_peak_score(im) for im in noise_images(40, seed=2)]
        up = [spectrum_peak_score(im) for im in surrogate_images(20, seed=3)]
        assert min(up) > np.mean(noise) + 5 * np.std(noise)

    def test_nearest_upsampling_is_anomalous_downward(self):
        # the zero-order hold nulls the half band: scores drop far below noise
        noise = [spectrum_peak_score(im) for im in noise_images(40, seed=4)]
        nn = [spectrum_peak_score(im) for im in surrogate_images(20, seed=5,
                                                                 mode="nearest")]
        assert max(nn) < np.mean(noise) - 5 * np.std(noise)

    def test_constant_image_nonpositive(self):
        assert spectrum_peak_score(np.full((64, 64, 3), 0.3)) <= 0.0

    def test_shift_tolerant(self):
        img = surrogate_images(1, seed=6)[0]
        rolled = np.roll(np.roll(img, 7, axis=0), 11, axis=1)
        a = spectrum_peak_score(img)
        b = spectrum_peak_score(rolled)
        assert abs(a - b) / abs(a) < 0.2


class TestSarCounting:
    def test_constant_classifier_sar_one(self):
        from camforge.networks import build_classifier

        net = build_classifier(3, 0)
        with torch.no_grad():
            net.head.weight.zero_()
            net.head.bias.copy_(torch.tensor([0.0, 5.0, 0.0]))
        images = noise_images(10, seed=7)
        res = evaluate_sar(net, ["a", "b", "c"], images, "b")
        assert res.sar == 1.0
        assert res.n_attributed_to_target == 10
        res2 = evaluate_sar(net, ["a", "b", "c"], images, "a")
        assert res2.sar == 0.0

    def test_unknown_target_rejected(self):
        from camforge.networks import build_classifier

        net = build_classifier(2, 0)
        with pytest.raises(ParameterError):
            evaluate_sar(net, ["a", "b"], noise_images(2), "zzz")

    def test_empty_set_rejected(self):
        from camforge.networks import build_classifier

        with pytest.raises(DataError):
            evaluate_sar(build_classifier(2, 0), ["a", "b"], [], "a")

    def test_sar_is_exact_ratio(self):
        r = SarResult("m", "clf", 12, 5)
        assert r.sar == 5 / 12


class TestDetectors:
    def test_spectrum_detector_separates_surrogates(self):
        real = noise_images(60, seed=8)          # stands in for camera content
        syn = surrogate_images(60, seed=9)
        det = train_gan_detector(real[:40], syn[:40], "spectrum", seed=0)
        auc = detector_auc(det, real[40:], syn[40:])
        assert auc > 0.95

    def test_factor_one_synthetics_not_separable_by_spectrum(self):
        # with the lattice feature absent the detector cannot do much
        real = noise_images(40, seed=10)
        flat = noise_images(40, seed=11)
        det = train_gan_detector(real[:25], flat[:25], "spectrum", seed=0)
        auc = detector_auc(det, real[25:], flat[25:])
        assert auc < 0.8

    def test_cnn_detector_trains_and_scores(self):
        real = noise_images(24, seed=12, size=32)
        syn = [im * 0.4 + 0.3 for im in noise_images(24, seed=13, size=32)]
        det = train_gan_detector(real, syn, "cnn", seed=0, steps=60)
        scores = det.score(syn)
        assert scores.shape == (24,)

    def test_single_class_rejected(self):
        with pytest.raises(DataError):
            train_gan_detector([], noise_images(2), "spectrum")

    def test_unknown_kind_rejected(self):
        with pytest.raises(ParameterError):
            train_gan_detector(noise_images(2), noise_images(2), "magic")


class TestThresholdAndTpr:
    def test_threshold_hits_target_fpr(self):
        det = train_gan_detector(noise_images(30, seed=14),
                                 surrogate_images(30, seed=15), "spectrum")
        val = noise_images(200, seed=16)
        thr = calibrate_threshold(det, val, fpr=0.01)
        fpr = float(np.mean(det.score(val) > thr))
        assert fpr <= 0.01 + 1e-9

    def test_saturating_detector_tpr_one(self):
        res = evaluate_tpr(ConstantDetector(np.inf), noise_images(7), threshold=0.0)
        assert res.tpr == 1.0
        assert res.n_images == 7

    def test_empty_set_is_error_not_zero(self):
        with pytest.raises(DataError):
            evaluate_tpr(ConstantDetector(1.0), [], threshold=0.0)

    def test_tpr_exact_ratio(self):
        r = DetectorResult("spectrum", 0.5, 8, 6)
        assert r.tpr == 6 / 8


class TestEmitReport:
    def _results(self):
        sar = [SarResult("m2", "clf-b", 10, 3), SarResult("m1", "clf-a", 10, 7)]
        det = [("before", DetectorResult("spectrum", 0.25, 20, 19)),
               ("after", DetectorResult("spectrum", 0.25, 20, 4))]
        return sar, det

    def test_single_row_schema(self, tmp_path):
        emit_report(tmp_path, sar_results=[SarResult("m", "clf", 4, 1)])
        with open(tmp_path / "sar.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["classifier", "target", "n", "hits", "sar"]
        assert rows[1] == ["clf", "m", "4", "1", repr(0.25)]

    def test_rows_sorted_deterministically(self, tmp_path):
        sar, det = self._results()
        emit_report(tmp_path, sar_results=sar, detector_results=det)
        with open(tmp_path / "sar.csv") as fh:
            rows = list(csv.reader(fh))[1:]
        assert [r[0] for r in rows] == ["clf-a", "clf-b"]

    def test_golden_bytes(self, tmp_path):
        sar, det = self._results()
        emit_report(tmp_path / "a", sar_results=sar, detector_results=det,
                    psnr_rows=[("img0", 31.5)])
        emit_report(tmp_path / "b", sar_results=sar, detector_results=det,
                    psnr_rows=[("img0", 31.5)])
        for name in ("sar.csv", "detector.csv", "psnr.csv"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()

    def test_loss_curves_and_spectra(self, tmp_path):
        rec = TrainingRunRecord()
        for i in range(5):
            rec.append(i, {"l_rec": 0.5 / (i + 1), "l_per": 0.1, "l_dst": 0.2,
                           "l_fm": 0.1, "l_adv": 0.7, "l_d": 1.4, "psnr": 30.0},
                       wall_time=float(i))
        spec = imageops.log_spectrum(noise_images(1, seed=17)[0])
        written = emit_report(tmp_path, loss_record=rec,
                              spectra=[("test", spec)])
        assert (tmp_path / "loss_curves.png").exists()
        assert (tmp_path / "spectrum_test.png").exists()
        assert (tmp_path / "spectrum_test.csv").exists()
        from camforge.fileio import load_spectrum_csv

        back = load_spectrum_csv(tmp_path / "spectrum_test.csv")
        assert np.allclose(back, spec, atol=1e-12)


def test_unattacked_attributions_partition_unity():
    """Attributions over all classes are mutually exclusive and exhaustive."""
    from camforge.networks import build_classifier

    net = build_classifier(3, 1)
    images = noise_images(30, seed=40)
    classes = ["a", "b", "c"]
    total = sum(evaluate_sar(net, classes, images, c).n_attributed_to_target
                for c in classes)
    assert total == len(images)
