import numpy as np
import pytest
import torch

from camforge import fileio, imageops
from camforge.attack import apply_attack
from camforge.networks import build_generator
from camforge.pipelines.manifest import DataError

torch.set_num_threads(1)


def synthetic_pool(n, seed=0, size=32, spread=0.4):
    rng = np.random.default_rng(seed)
    return [np.clip(rng.normal(0.05, spread / 2, (size, size, 3)), -spread, spread)
            for _ in range(n)]


@pytest.fixture(scope="module")
def identityish_generator():
    gen = build_generator(0)
    with torch.no_grad():
        gen.convs[-1].weight.zero_()
        gen.convs[-1].bias.zero_()
    return gen


class TestApplyAttack:
    def test_identityish_psnr_bound(self, identityish_generator):
        images = synthetic_pool(6, seed=1, spread=0.5)
        _, report = apply_attack(identityish_generator, images)
        # only tanh compression over |x| <= 0.5
        assert report.min_psnr > 30.0

    def test_row_count_matches_inputs(self, identityish_generator):
        images = synthetic_pool(5, seed=2)
        outputs, report = apply_attack(identityish_generator, images)
        assert len(outputs) == 5
        assert len(report.rows) == 5
        assert report.min_psnr <= report.mean_psnr <= report.max_psnr

    def test_outputs_in_open_range(self):
        gen = build_generator(3)
        outputs, _ = apply_attack(gen, synthetic_pool(4, seed=3))
        for out in outputs:
            assert np.abs(out).max() < 1.0

    def test_deterministic(self):
        gen = build_generator(4)
        images = synthetic_pool(4, seed=4)
        out1, rep1 = apply_attack(gen, images)
        out2, rep2 = apply_attack(gen, images)
        assert all(np.array_equal(a, b) for a, b in zip(out1, out2))
        assert rep1.rows == rep2.rows

    def test_psnr_reproducible_from_saved_files(self, tmp_path, identityish_generator):
        images = synthetic_pool(3, seed=5)
        in_paths = []
        for i, im in enumerate(images):
            p = tmp_path / f"in_{i}.png"
            fileio.save_image_png(im, p)
            in_paths.append(p)
        loaded = [fileio.load_image(p) for p in in_paths]
        outputs, report = apply_attack(identityish_generator, loaded)
        for i, out in enumerate(outputs):
            p = tmp_path / f"out_{i}.png"
            fileio.save_image_png(out, p)
            again = imageops.psnr(fileio.load_image(in_paths[i]), fileio.load_image(p))
            assert abs(again - report.rows[i][1]) < 0.01

    def test_jpeg_variant_keeps_pre_jpeg_psnr(self, identityish_generator):
        images = synthetic_pool(3, seed=6)
        tables = (np.full((8, 8), 12, dtype=int), np.full((8, 8), 20, dtype=int))
        plain_out, plain = apply_attack(identityish_generator, images)
        jpeg_out, jpeg = apply_attack(identityish_generator, images, jpeg_tables=tables)
        assert jpeg.jpeg_applied and not plain.jpeg_applied
        # report measures the attack's own distortion, identical across variants
        for (_, a), (_, b) in zip(plain.rows, jpeg.rows):
            assert a == pytest.approx(b, abs=1e-9)
        # but the emitted files differ (compression applied after accounting)
        assert not np.array_equal(plain_out[0], jpeg_out[0])

    def test_empty_input_rejected(self, identityish_generator):
        with pytest.raises(DataError):
            apply_attack(identityish_generator, [])

    def test_report_files(self, tmp_path, identityish_generator):
        _, report = apply_attack(identityish_generator, synthetic_pool(4, seed=7))
        report.save(tmp_path / "psnr.csv", tmp_path / "summary.json")
        import csv
        import json

        with open(tmp_path / "psnr.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["image", "psnr_db"]
        assert len(rows) == 5
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["n_images"] == 4
        assert summary["mean_psnr"] == pytest.approx(report.mean_psnr)
