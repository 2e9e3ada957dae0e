"""Synthetic corpus generator tests: determinism, exact ground truth, splits."""

from __future__ import annotations

import hashlib
import warnings
from pathlib import Path

import numpy as np
import pytest

from shadowsteer.geometry import LightPosition, RaycastConfig, raycast_shadow
from shadowsteer.imageio import load_scalar_map
from shadowsteer.scenes import (
    albedo_separability,
    build_dataset,
    hemisphere_lights,
    identity_heightfield,
    load_manifest,
    render_sample,
    sample_identity,
)


class TestSampleIdentity:
    def test_deterministic(self):
        a, b = sample_identity(7), sample_identity(7)
        assert a.identity_id == b.identity_id
        assert a.heightfield_seed == b.heightfield_seed
        assert a.marking_seed == b.marking_seed
        assert np.array_equal(a.albedo_palette, b.albedo_palette)

    def test_neighboring_seeds_differ(self):
        h7 = identity_heightfield(sample_identity(7), 32)
        h8 = identity_heightfield(sample_identity(8), 32)
        frac_changed = np.mean(np.abs(h7 - h8) > 0.05)
        assert frac_changed >= 0.10

    def test_heightfield_range(self):
        h = identity_heightfield(sample_identity(0), 32)
        assert h.min() >= 0.1 - 1e-9 and h.max() <= 0.9 + 1e-9

    def test_heightfield_smooth(self):
        h = identity_heightfield(sample_identity(3), 32)
        assert np.abs(np.diff(h, axis=0)).max() < 0.25
        assert np.abs(np.diff(h, axis=1)).max() < 0.25


class TestRenderSample:
    def test_overhead_light_fully_lit(self):
        sample = render_sample(sample_identity(1), LightPosition(0.5, 0.5, 1e6), 32)
        assert np.all(sample.shadow.grid == 1.0)
        assert sample.image.min() >= 0.0 and sample.image.max() <= 1.0

    def test_depth_is_light_independent(self):
        ident = sample_identity(2)
        a = render_sample(ident, LightPosition(0.5, 0.5, 1e6), 32)
        b = render_sample(ident, LightPosition(-3.0, 0.5, 1.5), 32)
        assert np.array_equal(a.depth.grid, b.depth.grid)
        assert not np.array_equal(a.shadow.grid, b.shadow.grid)

    def test_grazing_light_darker_than_overhead(self):
        ident = sample_identity(4)
        overhead = render_sample(ident, LightPosition(0.5, 0.5, 1e6), 32)
        grazing = render_sample(ident, LightPosition(-5.0, 0.5, 1.5), 32)
        assert grazing.shadow.grid.mean() < overhead.shadow.grid.mean()

    def test_compositing_equation(self):
        from shadowsteer.scenes import identity_albedo, lambertian_shading

        ident = sample_identity(5)
        light = LightPosition(-2.0, 1.0, 2.0)
        sample = render_sample(ident, light, 32)
        albedo = identity_albedo(ident, 32)
        shading = lambertian_shading(sample.depth.grid, light)
        expected = albedo * shading[..., None] * sample.shadow.grid[..., None]
        np.testing.assert_allclose(sample.image, expected, atol=1e-12)

    def test_invalid_size_rejected(self):
        with pytest.raises(ValueError):
            render_sample(sample_identity(1), LightPosition(0.5, 0.5, 2.0), 48)


class TestHemisphereLights:
    def test_all_lights_valid_for_raycasting(self):
        rng = np.random.default_rng(0)
        for light in hemisphere_lights(24, rng):
            assert light.z > 1.0

    def test_contains_grazing_and_overhead(self):
        rng = np.random.default_rng(1)
        lights = hemisphere_lights(24, rng)
        elevations = [np.degrees(np.arctan2(l.z, np.hypot(l.x - 0.5, l.y - 0.5))) for l in lights]
        assert min(elevations) < 40.0
        assert max(elevations) > 65.0


class TestBuildDataset:
    def test_small_build_structure(self, tmp_path):
        manifest = build_dataset(4, 2, 32, tmp_path / "ds", seed=1)
        assert manifest.n_samples == 8
        assert (tmp_path / "ds" / "manifest.json").exists()
        for rec in manifest.samples:
            for key in ("image", "shadow", "depth"):
                assert (tmp_path / "ds" / rec[key]).exists()

    def test_stored_shadow_reproducible_bit_exact(self, tmp_path):
        manifest = build_dataset(2, 2, 32, tmp_path / "ds", seed=3)
        for idx in range(manifest.n_samples):
            rec = manifest.samples[idx]
            depth = load_scalar_map(manifest.root / rec["depth"])
            shadow = load_scalar_map(manifest.root / rec["shadow"])
            recomputed = raycast_shadow(
                __import__("shadowsteer").DepthMap(depth), LightPosition(*rec["light"]), RaycastConfig()
            )
            assert np.array_equal(recomputed.grid, shadow)

    def test_byte_identical_rebuild(self, tmp_path):
        build_dataset(3, 2, 32, tmp_path / "a", seed=9)
        build_dataset(3, 2, 32, tmp_path / "b", seed=9)

        def tree_digest(root: Path) -> dict[str, str]:
            return {
                str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
                for p in sorted(root.rglob("*"))
                if p.is_file()
            }

        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")

    def test_degenerate_build_warns_and_has_empty_val(self, tmp_path):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            manifest = build_dataset(1, 1, 32, tmp_path / "ds", seed=1)
        assert manifest.n_samples == 1
        assert manifest.val == []
        assert any("val" in str(w.message) for w in caught)

    def test_val_split_holds_whole_identities(self, tmp_path):
        manifest = build_dataset(20, 3, 32, tmp_path / "ds", seed=2)
        val_ids = {manifest.samples[i]["identity_id"] for i in manifest.val}
        train_ids = {manifest.samples[i]["identity_id"] for i in manifest.train}
        assert val_ids.isdisjoint(train_ids)
        assert len(manifest.val) == len(val_ids) * 3  # whole identities only
        assert len(manifest.val) + len(manifest.train) == manifest.n_samples

    def test_overwrite_required_for_existing(self, tmp_path):
        build_dataset(1, 1, 32, tmp_path / "ds", seed=1)
        with pytest.raises(FileExistsError):
            build_dataset(1, 1, 32, tmp_path / "ds", seed=1)
        build_dataset(1, 1, 32, tmp_path / "ds", seed=1, overwrite=True)

    def test_manifest_roundtrip(self, tmp_path):
        manifest = build_dataset(2, 2, 32, tmp_path / "ds", seed=5)
        loaded = load_manifest(tmp_path / "ds" / "manifest.json")
        assert loaded.to_dict() == manifest.to_dict()
        sample = loaded.load_sample(0)
        assert sample.image.shape == (32, 32, 3)

    def test_identity_separability(self, tmp_path):
        manifest = build_dataset(6, 2, 32, tmp_path / "ds", seed=8)
        between, within = albedo_separability(manifest)
        assert between > within
