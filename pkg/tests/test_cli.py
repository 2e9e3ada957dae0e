"""CLI contract tests: thin wrappers, config merging, env fallbacks, exit codes."""

from __future__ import annotations

import json

import numpy as np
import pytest

from shadowsteer.cli import main
from shadowsteer.diffusion import DiffusionBackend, SamplerConfig
from shadowsteer.imageio import save_mask
from shadowsteer.scenes import load_manifest


class TestSynthData:
    def test_builds_expected_counts(self, tmp_path):
        out = tmp_path / "ds"
        code = main(["synth-data", "--identities", "4", "--lights", "2", "--size", "32", "--out", str(out), "--seed", "3"])
        assert code == 0
        manifest = load_manifest(out / "manifest.json")
        assert manifest.n_samples == 8

    def test_missing_out_is_validation_error(self):
        assert main(["synth-data", "--identities", "2"]) == 2

    def test_existing_dataset_without_overwrite_fails(self, tmp_path):
        out = tmp_path / "ds"
        args = ["synth-data", "--identities", "1", "--lights", "1", "--out", str(out), "--seed", "1"]
        assert main(args) == 0
        assert main(args) == 2
        assert main(args + ["--overwrite"]) == 0

    def test_config_file_merges_under_flags(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"identities": 3, "lights": 2, "seed": 7}))
        out = tmp_path / "ds"
        code = main(["synth-data", "--config", str(config), "--identities", "2", "--out", str(out)])
        assert code == 0
        manifest = load_manifest(out / "manifest.json")
        assert manifest.n_identities == 2  # flag wins
        assert manifest.lights_per_identity == 2  # config fills the gap


class TestGenerate:
    def test_uncontrolled_matches_backend_directly(self, micro_stack_paths, tmp_path):
        out = tmp_path / "run"
        code = main(
            [
                "generate",
                "--diffusion-ckpt",
                str(micro_stack_paths.diffusion),
                "--seed",
                "21",
                "--cond",
                "1",
                "--strength",
                "0",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        backend = DiffusionBackend.load_checkpoint(micro_stack_paths.diffusion)
        direct = backend.generate(1, 21, SamplerConfig())
        from shadowsteer.imageio import save_image

        save_image(tmp_path / "direct.png", direct)
        assert (out / "result.png").read_bytes() == (tmp_path / "direct.png").read_bytes()

    def test_mask_and_light_together_rejected(self, micro_stack_paths, tmp_path):
        mask_path = tmp_path / "mask.png"
        save_mask(mask_path, np.ones((32, 32)))
        code = main(
            [
                "generate",
                "--diffusion-ckpt",
                str(micro_stack_paths.diffusion),
                "--mask",
                str(mask_path),
                "--light=-2,0.5,1.6",
                "--out",
                str(tmp_path / "run"),
            ]
        )
        assert code == 2

    def test_controlled_generation_writes_run_dir(self, micro_stack_paths, tmp_path):
        mask_path = tmp_path / "mask.png"
        save_mask(mask_path, np.ones((32, 32)))
        out = tmp_path / "run"
        code = main(
            [
                "generate",
                "--diffusion-ckpt",
                str(micro_stack_paths.diffusion),
                "--sd-ckpt",
                str(micro_stack_paths.sd),
                "--id-ckpt",
                str(micro_stack_paths.id),
                "--mask",
                str(mask_path),
                "--strength",
                "0.1",
                "--seed",
                "2",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        for name in ("result.png", "target_shadow.png", "trace.json", "config.json"):
            assert (out / name).exists()

    def test_env_vars_supply_checkpoints(self, micro_stack_paths, tmp_path, monkeypatch):
        monkeypatch.setenv("SD_DIRECTOR_DIFFUSION_CKPT", str(micro_stack_paths.diffusion))
        out = tmp_path / "run"
        code = main(["generate", "--seed", "1", "--strength", "0", "--out", str(out)])
        assert code == 0
        assert (out / "result.png").exists()

    def test_missing_estimators_for_control_is_validation_error(self, micro_stack_paths, tmp_path):
        mask_path = tmp_path / "mask.png"
        save_mask(mask_path, np.ones((32, 32)))
        code = main(
            [
                "generate",
                "--diffusion-ckpt",
                str(micro_stack_paths.diffusion),
                "--mask",
                str(mask_path),
                "--out",
                str(tmp_path / "run"),
            ]
        )
        assert code == 2


class TestAblate:
    def test_report_written_and_schema_valid(self, micro_stack_paths, tmp_path):
        out = tmp_path / "ablation"
        code = main(
            [
                "ablate",
                "--diffusion-ckpt",
                str(micro_stack_paths.diffusion),
                "--sd-ckpt",
                str(micro_stack_paths.sd),
                "--id-ckpt",
                str(micro_stack_paths.id),
                "--variants",
                "a,c",
                "--seeds",
                "2",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        report = json.loads((out / "ablation_report.json").read_text())
        assert report["schema_version"] == 1
        assert set(report["rows"]) == {"a_full", "c_last_step"}
        assert len(report["seeds"]) == 2
        assert (out / "ablation_report.md").exists()

    def test_unknown_variant_rejected(self, micro_stack_paths, tmp_path):
        code = main(
            [
                "ablate",
                "--diffusion-ckpt",
                str(micro_stack_paths.diffusion),
                "--sd-ckpt",
                str(micro_stack_paths.sd),
                "--id-ckpt",
                str(micro_stack_paths.id),
                "--variants",
                "z",
                "--out",
                str(tmp_path / "x"),
            ]
        )
        assert code == 2

    def test_variant_missing_checkpoint_rejected(self, micro_stack_paths, tmp_path):
        # Variant (d) needs the output-feature estimator, which the micro stack lacks.
        code = main(
            [
                "ablate",
                "--diffusion-ckpt",
                str(micro_stack_paths.diffusion),
                "--sd-ckpt",
                str(micro_stack_paths.sd),
                "--id-ckpt",
                str(micro_stack_paths.id),
                "--variants",
                "d",
                "--seeds",
                "1",
                "--out",
                str(tmp_path / "x"),
            ]
        )
        assert code == 2
