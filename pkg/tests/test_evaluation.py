"""Metric and report-harness tests (directional results live in the acceptance suite)."""

from __future__ import annotations

import numpy as np
import pytest

from shadowsteer.evaluation import (
    AblationReport,
    ablation_variants,
    run_ablation,
    shadow_compliance,
    toy_cvs,
)
from shadowsteer.guidance import GuidanceConfig, ShadowControl


class TestToyCvs:
    def test_self_similarity_is_one(self, micro_stack):
        rng = np.random.default_rng(0)
        image = rng.uniform(0, 1, size=(32, 32, 3))
        score = toy_cvs(image, image.copy(), micro_stack.id, micro_stack.backend)
        assert score == pytest.approx(1.0, abs=1e-5)

    def test_symmetry(self, micro_stack):
        rng = np.random.default_rng(1)
        a = rng.uniform(0, 1, size=(32, 32, 3))
        b = rng.uniform(0, 1, size=(32, 32, 3))
        ab = toy_cvs(a, b, micro_stack.id, micro_stack.backend)
        ba = toy_cvs(b, a, micro_stack.id, micro_stack.backend)
        assert abs(ab - ba) < 1e-6

    def test_range(self, micro_stack):
        rng = np.random.default_rng(2)
        a = rng.uniform(0, 1, size=(32, 32, 3))
        b = rng.uniform(0, 1, size=(32, 32, 3))
        assert -1.0 - 1e-6 <= toy_cvs(a, b, micro_stack.id, micro_stack.backend) <= 1.0 + 1e-6


class TestComplianceMetric:
    def test_deterministic(self, micro_stack):
        from shadowsteer.diffusion import SamplerConfig

        control = ShadowControl(mode="mask", mask=np.ones((32, 32)), strength=0.1)
        from shadowsteer.guidance import generate_with_control

        result = generate_with_control(0, 3, control, GuidanceConfig(), SamplerConfig(), micro_stack)
        a = shadow_compliance(result, micro_stack.sd, micro_stack.backend)
        b = shadow_compliance(result, micro_stack.sd, micro_stack.backend)
        assert a == b


class TestVariantCatalog:
    def test_seven_rows_one_to_one(self):
        catalog = ablation_variants()
        assert sorted(catalog) == [
            "a_full",
            "b_latter_steps",
            "c_last_step",
            "d_unet_output_features",
            "e_rgb_space",
            "f_l1_input",
            "g_l1_output",
        ]
        base = GuidanceConfig()
        assert catalog["b_latter_steps"].apply(base).intervention_step == 80
        assert catalog["c_last_step"].apply(base).intervention_step == 99
        assert catalog["d_unet_output_features"].apply(base).sd_feature_source == "output"
        assert catalog["e_rgb_space"].apply(base).sd_feature_source == "rgb"
        assert catalog["f_l1_input"].apply(base).id_constraint == "l1_input"
        assert catalog["g_l1_output"].apply(base).id_constraint == "l1_output"
        assert catalog["a_full"].apply(base) == base

    def test_requirements_listed(self):
        catalog = ablation_variants()
        assert catalog["d_unet_output_features"].requirements() == ["sd_output"]
        assert catalog["e_rgb_space"].requirements() == ["rgb"]
        assert catalog["a_full"].requirements() == []


class TestReportDiscipline:
    def test_mismatched_seed_sets_refused(self):
        report = AblationReport(schema_version=1, seeds=[1, 2], conds=[0, 0], control={})
        report.add_row("a_full", [1, 2], {"shadow_compliance": 0.1, "toy_cvs": 0.9})
        with pytest.raises(ValueError):
            report.add_row("c_last_step", [1, 3], {"shadow_compliance": 0.2, "toy_cvs": 0.8})

    def test_single_variant_single_seed_report(self, micro_stack, tmp_path):
        control = ShadowControl(mode="mask", mask=np.ones((32, 32)), strength=0.1)
        report = run_ablation(["a_full"], 1, micro_stack, control, out_dir=tmp_path)
        assert set(report.rows) == {"a_full"}
        assert len(report.seeds) == 1
        assert (tmp_path / "ablation_report.json").exists()
        table = report.markdown_table()
        assert "a_full" in table

    def test_missing_variant_checkpoints_explicit(self, micro_stack):
        control = ShadowControl(mode="mask", mask=np.ones((32, 32)), strength=0.1)
        with pytest.raises(ValueError, match="d_unet_output_features"):
            run_ablation(["d_unet_output_features"], 1, micro_stack, control)
