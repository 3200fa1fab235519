import numpy as np
import pytest
import torch

from camforge import imageops
from camforge.imageops import ShapeError
from camforge.networks import (CameraClassifier, Discriminator, Embedder,
                               FixedResidualLayer, Generator,
                               MeanOnlyBatchNorm2d, SpectralConv2d,
                               build_classifier, build_discriminator,
                               build_embedder, build_generator,
                               checkpoint_digest, load_checkpoint,
                               save_checkpoint, spectral_normalize,
                               spectral_updates, to_image, to_tensor)

torch.set_num_threads(1)


def rand_batch(n=1, size=64, seed=0, lo=-0.6, hi=0.6):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(n, 3, size, size, generator=g) * (hi - lo) + lo


class TestGenerator:
    def test_shape_and_range(self):
        gen = build_generator(0)
        x = rand_batch(2, 64)
        y = gen(x)
        assert y.shape == x.shape
        assert float(y.abs().max()) < 1.0

    def test_zeroed_final_layer_is_tanh(self):
        gen = build_generator(0)
        with torch.no_grad():
            gen.convs[-1].weight.zero_()
            gen.convs[-1].bias.zero_()
        x = rand_batch(1, 32, seed=1)
        assert torch.equal(gen(x), torch.tanh(x))

    def test_tanh_identity_gap_bound(self):
        x = torch.linspace(-0.5, 0.5, 101)
        assert float((torch.tanh(x) - x).abs().max()) < 0.22

    def test_deterministic_build(self):
        assert checkpoint_digest(build_generator(7)) == checkpoint_digest(build_generator(7))
        assert checkpoint_digest(build_generator(7)) != checkpoint_digest(build_generator(8))


class TestDiscriminator:
    def test_output_map_size(self):
        d = build_discriminator(0)
        assert d(rand_batch(1, 64)).shape == (1, 52, 52)
        assert d(rand_batch(1, 30)).shape == (1, 18, 18)

    def test_too_small_patch_raises(self):
        d = build_discriminator(0)
        with pytest.raises(ShapeError):
            d(rand_batch(1, 12))

    def test_translation_covariance(self):
        d = build_discriminator(0)
        d.eval()
        x = rand_batch(1, 72, seed=3)
        shift = 8
        with torch.no_grad():
            full = d(x)
            shifted = d(x[:, :, shift:, shift:])
        # interior of the map (away from replicate-border effects of the
        # fixed layer) shifts with the content
        a = full[0, shift + 4:-4, shift + 4:-4]
        b = shifted[0, 4:-4, 4:-4]
        assert torch.allclose(a, b, atol=1e-5)

    def test_fixed_layer_matches_numpy_op(self):
        layer = FixedResidualLayer()
        img = np.random.default_rng(0).uniform(-1, 1, (20, 24, 3))
        got = layer(to_tensor(img).unsqueeze(0))[0].numpy().transpose(1, 2, 0)
        want = imageops.extract_residuals(img)
        assert np.abs(got - want).max() < 1e-5

    def test_fixed_layer_not_trainable(self):
        d = build_discriminator(0)
        names = [n for n, _ in d.residuals.named_parameters()]
        assert names == []
        assert len(list(d.residuals.buffers())) == 2


class TestEmbedder:
    def test_embedding_shape_and_features(self):
        e = build_embedder(0)
        emb, feats = e(rand_batch(2, 64))
        assert emb.shape == (2, 512)
        assert [f.shape[1] for f in feats] == [64, 128, 256, 512]
        assert [f.shape[-1] for f in feats] == [64, 32, 16, 8]

    def test_small_valid_size(self):
        emb, _ = build_embedder(0)(rand_batch(1, 32))
        assert emb.shape == (1, 512)

    def test_indivisible_size_raises(self):
        with pytest.raises(ShapeError):
            build_embedder(0)(rand_batch(1, 40))

    def test_gmp_invariant_to_spatial_shuffle(self):
        e = build_embedder(0)
        e.eval()
        x = rand_batch(1, 64, seed=5)
        with torch.no_grad():
            h = e.residuals(x)
            for block in e.blocks:
                h = torch.nn.functional.avg_pool2d(block(h), 2)
            grid = h  # 4x4x512 pre-pool grid
            emb, _ = e(x)
        flat = grid.reshape(1, 512, -1)
        perm = torch.randperm(flat.shape[-1], generator=torch.Generator().manual_seed(0))
        shuffled = torch.nn.functional.normalize(
            flat[:, :, perm].amax(dim=-1), dim=-1)
        assert torch.allclose(shuffled, emb, atol=1e-6)

    def test_embedding_is_unit_norm(self):
        emb, _ = build_embedder(0)(rand_batch(3, 32, seed=6))
        assert torch.allclose(emb.norm(dim=-1), torch.ones(3), atol=1e-5)


class TestSpectralNormalize:
    def test_known_top_singular_value(self):
        w = torch.zeros(6, 6, dtype=torch.float64)
        w[0, 0], w[1, 1], w[2, 2] = 4.0, 2.5, 1.0
        u = torch.nn.functional.normalize(
            torch.randn(6, generator=torch.Generator().manual_seed(0),
                        dtype=torch.float64), dim=0)
        for _ in range(50):
            w_norm, u = spectral_normalize(w, u)
        sigma_hat = float(torch.linalg.svdvals(w)[0] / torch.linalg.svdvals(w_norm)[0])
        # oracle: full singular decomposition
        assert 3.99 <= sigma_hat <= 4.01
        assert 0.99 <= float(torch.linalg.svdvals(w_norm)[0]) <= 1.01

    def test_orthogonal_weight_nearly_unchanged(self):
        q, _ = torch.linalg.qr(torch.randn(8, 8, generator=torch.Generator().manual_seed(1)))
        u = torch.nn.functional.normalize(torch.randn(8, generator=torch.Generator().manual_seed(2)), dim=0)
        w_norm, u = spectral_normalize(q, u)
        assert float((w_norm - q).abs().max()) < 1e-4

    def test_idempotent_after_convergence(self):
        w = torch.randn(10, 7, generator=torch.Generator().manual_seed(3))
        u = torch.nn.functional.normalize(torch.randn(10, generator=torch.Generator().manual_seed(4)), dim=0)
        for _ in range(200):
            w_norm, u = spectral_normalize(w, u)
        w2, _ = spectral_normalize(w_norm, u)
        assert float((w2 - w_norm).abs().max()) < 1e-4

    def test_zero_weight_passthrough(self):
        w = torch.zeros(4, 4)
        u = torch.ones(4) / 2.0
        w_out, u_out = spectral_normalize(w, u)
        assert torch.equal(w_out, w)
        assert torch.equal(u_out, u)

    def test_update_gating(self):
        conv = SpectralConv2d(3, 4, 3)
        before = conv.u.clone()
        conv(torch.randn(1, 3, 8, 8, generator=torch.Generator().manual_seed(5)))
        assert torch.equal(conv.u, before)
        with spectral_updates(conv):
            conv(torch.randn(1, 3, 8, 8, generator=torch.Generator().manual_seed(6)))
        assert not torch.equal(conv.u, before)


class TestMeanOnlyBatchNorm:
    def test_train_mode_zero_mean(self):
        bn = MeanOnlyBatchNorm2d(5)
        bn.train()
        x = torch.randn(4, 5, 6, 6, generator=torch.Generator().manual_seed(0)) + 3.0
        out = bn(x)
        assert torch.allclose(out.mean(dim=(0, 2, 3)), torch.zeros(5), atol=1e-6)

    def test_variance_untouched(self):
        bn = MeanOnlyBatchNorm2d(3)
        bn.train()
        x = torch.randn(8, 3, 4, 4, generator=torch.Generator().manual_seed(1)) * 2.5
        out = bn(x)
        vx = x.var(dim=(0, 2, 3), unbiased=False)
        vo = out.var(dim=(0, 2, 3), unbiased=False)
        assert torch.allclose(vx, vo, atol=1e-5)

    def test_eval_mode_formula(self):
        bn = MeanOnlyBatchNorm2d(2)
        with torch.no_grad():
            bn.running_mean.copy_(torch.tensor([0.5, -1.0]))
            bn.bias.copy_(torch.tensor([0.1, 0.2]))
        bn.eval()
        x = torch.randn(3, 2, 4, 4, generator=torch.Generator().manual_seed(2))
        expect = x - torch.tensor([0.5, -1.0]).view(1, 2, 1, 1) + torch.tensor([0.1, 0.2]).view(1, 2, 1, 1)
        assert torch.allclose(bn(x), expect, atol=1e-7)

    def test_running_mean_ema(self):
        bn = MeanOnlyBatchNorm2d(1, momentum=0.9)
        bn.train()
        x = torch.full((2, 1, 2, 2), 10.0)
        bn(x)
        assert torch.allclose(bn.running_mean, torch.tensor([1.0]), atol=1e-6)


class TestClassifier:
    def test_logit_shapes(self):
        for k in (2, 3, 10):
            net = build_classifier(k, 0)
            assert net(rand_batch(2, 64)).shape == (2, k)

    def test_untrained_is_chance_level(self):
        net = build_classifier(3, 0)
        x = rand_batch(300, 32, seed=9)
        with torch.no_grad():
            preds = net(x).argmax(dim=1)
        counts = torch.bincount(preds, minlength=3).float() / 300
        # random-feature classifier may be biased, but a balanced random
        # labelling stays near chance on average
        assert counts.max() <= 1.0
        rng_states = [build_classifier(3, s)(x).argmax(dim=1) for s in range(4)]
        accs = [float((p == torch.randint(3, (300,), generator=torch.Generator().manual_seed(1))).float().mean())
                for p in rng_states]
        assert abs(np.mean(accs) - 1 / 3) < 0.05


class TestCheckpoints:
    def test_roundtrip_bitexact(self, tmp_path):
        gen = build_generator(3)
        header = {"network": "generator", "step": 123}
        save_checkpoint(tmp_path / "g.ckpt", gen, header)
        other = Generator()
        got = load_checkpoint(tmp_path / "g.ckpt", other)
        assert got["step"] == 123
        assert checkpoint_digest(other) == checkpoint_digest(gen)

    def test_archive_contains_header_and_arrays(self, tmp_path):
        import json
        import zipfile

        net = build_discriminator(1)
        save_checkpoint(tmp_path / "d.ckpt", net, {"network": "discriminator", "step": 1})
        with zipfile.ZipFile(tmp_path / "d.ckpt") as z:
            names = z.namelist()
            assert "header.json" in names
            assert any(n.startswith("arrays/") for n in names)
            header = json.loads(z.read("header.json"))
            assert header["network"] == "discriminator"
            state = net.state_dict()
            array_names = {n[len("arrays/"):-len(".npy")] for n in names
                           if n.startswith("arrays/")}
            assert array_names == set(state.keys())


class TestReferenceScaleShapes:
    """Shape arithmetic at the reference 256-pixel patch size."""

    def test_discriminator_map_256(self):
        d = build_discriminator(0)
        with torch.no_grad():
            out = d(rand_batch(1, 256, seed=40))
        assert out.shape == (1, 244, 244)

    def test_embedder_grid_256(self):
        e = build_embedder(0)
        with torch.no_grad():
            h = e.residuals(rand_batch(1, 256, seed=41))
            for block in e.blocks:
                h = torch.nn.functional.avg_pool2d(block(h), 2)
        assert h.shape == (1, 512, 16, 16)
        with torch.no_grad():
            emb, _ = e(rand_batch(1, 256, seed=41))
        assert emb.shape == (1, 512)
