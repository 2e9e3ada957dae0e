"""Estimator contracts: bounded outputs, unit embeddings, fusion properties, training smoke."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from shadowsteer.diffusion import DiffusionBackend, NoiseSchedule, SamplerConfig, SmallUNet, UNetConfig
from shadowsteer.diffusion.backend import CheckpointError
from shadowsteer.estimators import (
    EstimatorTrainConfig,
    IDEstimator,
    SDEstimator,
    _CorpusCache,
    constant_baseline_l1,
    load_estimator,
    sd_estimate,
    train_id_estimator,
    train_sd_estimator,
    triplet_accuracy,
    triplet_loss,
    validate_sd_estimator,
)
from shadowsteer.scenes import build_dataset


@pytest.fixture(scope="module")
def backend():
    torch.manual_seed(0)
    model = SmallUNet(UNetConfig(base_channels=16, num_classes=4))
    return DiffusionBackend(model, NoiseSchedule())


@pytest.fixture(scope="module")
def sd_estimator(backend):
    torch.manual_seed(1)
    return SDEstimator(backend.model.config.tap_shapes, backend.image_size)


@pytest.fixture(scope="module")
def id_estimator(backend):
    torch.manual_seed(2)
    return IDEstimator(backend.model.config.tap_shapes, backend.image_size)


def _pyramid(backend, seed=0, t=100):
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(1, 3, 32, 32, generator=gen)
    return backend.features_at(x, t)


class TestSDEstimator:
    def test_zero_pyramid_yields_valid_maps(self, backend, sd_estimator):
        taps = [torch.zeros(1, c, r, r) for c, r in backend.model.config.tap_shapes]
        with torch.no_grad():
            shadow, depth = sd_estimator(taps)
        for out in (shadow, depth):
            assert torch.all(torch.isfinite(out))
            assert out.min() >= 0.0 and out.max() <= 1.0
            assert out.shape == (1, 1, 32, 32)

    def test_deterministic(self, backend, sd_estimator):
        pyramid = _pyramid(backend, seed=3)
        with torch.no_grad():
            a = sd_estimator(pyramid.taps)
            b = sd_estimator(pyramid.taps)
        assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])

    def test_typed_wrapper(self, backend, sd_estimator):
        shadow, depth = sd_estimate(sd_estimator, _pyramid(backend, seed=4))
        assert shadow.grid.shape == (32, 32)
        assert depth.grid.shape == (32, 32)

    def test_parameter_budget(self, backend, sd_estimator):
        assert sum(p.numel() for p in sd_estimator.parameters()) < 2_000_000

    def test_softmax_shift_invariance(self, backend, sd_estimator):
        pyramid = _pyramid(backend, seed=5)
        with torch.no_grad():
            before = sd_estimator(pyramid.taps)
            sd_estimator.fusion.tap_logits += 3.7  # constant offset
            after = sd_estimator(pyramid.taps)
            sd_estimator.fusion.tap_logits -= 3.7
        assert torch.allclose(before[0], after[0], atol=1e-6)
        assert torch.allclose(before[1], after[1], atol=1e-6)

    def test_tap_weights_sum_to_one(self, sd_estimator):
        weights = torch.softmax(sd_estimator.fusion.tap_logits, dim=0)
        assert abs(weights.sum().item() - 1.0) < 1e-6

    def test_tap_count_mismatch_rejected(self, backend, sd_estimator):
        pyramid = _pyramid(backend, seed=6)
        with pytest.raises(ValueError):
            sd_estimator(pyramid.taps[:3])


class TestIDEstimator:
    def test_unit_norm_is_structural(self, backend, id_estimator):
        emb = id_estimator(_pyramid(backend, seed=7).taps)
        assert abs(emb.norm().item() - 1.0) < 1e-5
        assert emb.shape == (1, 128)

    def test_deterministic(self, backend, id_estimator):
        pyramid = _pyramid(backend, seed=8)
        with torch.no_grad():
            assert torch.equal(id_estimator(pyramid.taps), id_estimator(pyramid.taps))


class TestTripletLoss:
    def _unit(self, *values):
        v = torch.tensor([list(values)], dtype=torch.float64)
        return v / v.norm()

    def _with_distances(self, d_ap, d_an):
        # Build unit vectors at prescribed cosine distances from the anchor.
        anchor = torch.tensor([[1.0, 0.0]], dtype=torch.float64)

        def at_distance(d):
            cos = 1.0 - d
            sin = float(np.sqrt(max(0.0, 1.0 - cos**2)))
            return torch.tensor([[cos, sin]], dtype=torch.float64)

        return anchor, at_distance(d_ap), at_distance(d_an)

    def test_satisfied_triplet_is_zero(self):
        a, p, n = self._with_distances(0.1, 0.9)
        assert triplet_loss(a, p, n, margin=0.5).item() == pytest.approx(0.0)

    def test_violated_triplet_arithmetic(self):
        a, p, n = self._with_distances(0.6, 0.4)
        assert triplet_loss(a, p, n, margin=0.5).item() == pytest.approx(0.7, abs=1e-9)

    def test_identical_positive_beyond_margin(self):
        a, _, n = self._with_distances(0.0, 0.5)
        assert triplet_loss(a, a.clone(), n, margin=0.5).item() == pytest.approx(0.0)

    def test_non_normalized_rejected(self):
        a = torch.tensor([[2.0, 0.0]])
        with pytest.raises(ValueError):
            triplet_loss(a, a, a)

    def test_never_negative(self):
        gen = torch.Generator().manual_seed(9)
        for _ in range(20):
            vecs = torch.nn.functional.normalize(torch.randn(3, 8, generator=gen), dim=-1)
            loss = triplet_loss(vecs[0:1], vecs[1:2], vecs[2:3], margin=0.5)
            assert loss.item() >= 0.0


class TestDifferentiabilityChain:
    def test_guidance_style_gradient_vs_finite_differences(self, backend):
        # L1(shadow estimate, target) gradient w.r.t. the latent, float64, 8x8 crop.
        backend.to_dtype(torch.float64)
        estimator = SDEstimator(backend.model.config.tap_shapes, backend.image_size).double()
        try:
            gen = torch.Generator().manual_seed(10)
            x = torch.randn(1, 3, 32, 32, generator=gen, dtype=torch.float64)
            target = torch.rand(1, 1, 32, 32, generator=gen, dtype=torch.float64)
            t = 599

            def loss_fn(latent):
                pyramid = backend.features_at(latent, t, grad=True)
                shadow, _ = estimator(pyramid.taps)
                return (shadow - target).abs().mean()

            x_req = x.clone().requires_grad_(True)
            loss_fn(x_req).backward()
            analytic = x_req.grad[0, 1, 8:16, 8:16].clone()

            h = 1e-5
            numeric = torch.zeros(8, 8, dtype=torch.float64)
            for i in range(8):
                for j in range(8):
                    plus = x.clone()
                    plus[0, 1, 8 + i, 8 + j] += h
                    minus = x.clone()
                    minus[0, 1, 8 + i, 8 + j] -= h
                    with torch.no_grad():
                        numeric[i, j] = (loss_fn(plus).item() - loss_fn(minus).item()) / (2 * h)
            rel = (analytic - numeric).norm() / numeric.norm()
            assert rel < 1e-3
        finally:
            backend.to_dtype(torch.float32)


@pytest.fixture(scope="module")
def trained_micro_stack(tmp_path_factory):
    """Tiny corpus and short trainings; enough to exercise the training loops."""
    from shadowsteer.diffusion import DiffusionTrainConfig, train_diffusion

    root = tmp_path_factory.mktemp("micro")
    manifest = build_dataset(6, 3, 32, root / "ds", seed=31)
    diff_cfg = DiffusionTrainConfig(steps=120, batch_size=8, lr=1e-3, base_channels=16, seed=0)
    train_diffusion(manifest, diff_cfg, root / "diffusion.pt")
    return root, manifest


class TestTrainingLoops:
    def test_sd_training_smoke(self, trained_micro_stack):
        root, manifest = trained_micro_stack
        # 18-sample corpus -> 2 steps/epoch; 40 epochs is still a quick smoke run.
        cfg = EstimatorTrainConfig(max_epochs=40, seed=0)
        summary = train_sd_estimator(manifest, root / "diffusion.pt", cfg, root / "sd.pt")
        assert (root / "sd.pt").exists()
        assert "shadow_l1" in summary["val"]

        backend = DiffusionBackend.load_checkpoint(root / "diffusion.pt")
        estimator = load_estimator(root / "sd.pt", backend)
        corpus = _CorpusCache(manifest)
        metrics = validate_sd_estimator(estimator, backend, corpus)
        baselines = constant_baseline_l1(corpus)
        # Even two epochs on a frozen toy backend beat the constant predictor.
        assert metrics["shadow_l1"] < baselines["shadow"]

    def test_id_training_smoke(self, trained_micro_stack):
        root, manifest = trained_micro_stack
        cfg = EstimatorTrainConfig(batch_size=3, max_epochs=2, seed=0)
        summary = train_id_estimator(manifest, root / "diffusion.pt", cfg, root / "id.pt")
        assert (root / "id.pt").exists()
        backend = DiffusionBackend.load_checkpoint(root / "diffusion.pt")
        estimator = load_estimator(root / "id.pt", backend)
        accuracy = triplet_accuracy(estimator, backend, _CorpusCache(manifest), n_triplets=50)
        assert 0.0 <= accuracy <= 1.0

    def test_backbone_hash_mismatch_refused(self, trained_micro_stack, tmp_path):
        root, manifest = trained_micro_stack
        torch.manual_seed(99)
        other = DiffusionBackend(SmallUNet(UNetConfig(base_channels=16, num_classes=6)), NoiseSchedule())
        other.save_checkpoint(tmp_path / "other.pt")
        other_loaded = DiffusionBackend.load_checkpoint(tmp_path / "other.pt")
        with pytest.raises(CheckpointError):
            load_estimator(root / "sd.pt", other_loaded)

    def test_untrained_estimator_embeddings_still_unit(self, backend):
        estimator = IDEstimator(backend.model.config.tap_shapes, backend.image_size)
        emb = estimator(_pyramid(backend, seed=11).taps)
        assert abs(emb.norm().item() - 1.0) < 1e-5
