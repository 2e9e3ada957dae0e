"""Metrics and the ablation harness.

toy_cvs scores identity retention as the cosine similarity of the identity
readout's embeddings for two images, each pushed through a light-noise
forward pass. shadow_compliance scores how well a controlled generation's
final image carries its target shadow, again via a light-noise readout.
CLIP-based perceptual metrics are deliberately not reimplemented; the
quality column of the ablation report is the mean absolute deviation of the
uncontrolled region against the strength-0 image instead.

The harness runs every variant on identical (seed, cond, control) tuples and
refuses to aggregate mismatched runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .diffusion.backend import DiffusionBackend, SamplerConfig
from .estimators import IDEstimator
from .guidance import ControlledResult, GuidanceConfig, GuidanceStack, ShadowControl, generate_with_control

REPORT_SCHEMA_VERSION = 1
LIGHT_NOISE_T = 50  # readout timestep for scoring finished images
_METRIC_NOISE_SEED = 0x5EED


@dataclass(frozen=True)
class AblationVariant:
    """One row of the design-necessity study, as overrides on the full method."""

    tag: str
    intervention_step: int | None = None
    sd_feature_source: str = "internal"
    id_constraint: str = "embedding"

    def apply(self, base: GuidanceConfig) -> GuidanceConfig:
        cfg = base
        if self.intervention_step is not None:
            cfg = replace(cfg, intervention_step=self.intervention_step)
        return replace(cfg, sd_feature_source=self.sd_feature_source, id_constraint=self.id_constraint)

    def requirements(self) -> list[str]:
        need = []
        if self.sd_feature_source == "output":
            need.append("sd_output")
        if self.sd_feature_source == "rgb":
            need.append("rgb")
        return need


def ablation_variants() -> dict[str, AblationVariant]:
    """The seven studied configurations: full method plus six deliberate breaks."""
    return {
        "a_full": AblationVariant("a_full"),
        "b_latter_steps": AblationVariant("b_latter_steps", intervention_step=80),
        "c_last_step": AblationVariant("c_last_step", intervention_step=99),
        "d_unet_output_features": AblationVariant("d_unet_output_features", sd_feature_source="output"),
        "e_rgb_space": AblationVariant("e_rgb_space", sd_feature_source="rgb"),
        "f_l1_input": AblationVariant("f_l1_input", id_constraint="l1_input"),
        "g_l1_output": AblationVariant("g_l1_output", id_constraint="l1_output"),
    }


def _fixed_noise(shape: tuple[int, ...], dtype: torch.dtype) -> torch.Tensor:
    gen = torch.Generator().manual_seed(_METRIC_NOISE_SEED)
    return torch.randn(shape, generator=gen, dtype=dtype)


def _light_noise_latent(backend: DiffusionBackend, image: np.ndarray, t: int = LIGHT_NOISE_T) -> torch.Tensor:
    x0 = backend.encode(image).to(backend.dtype)
    noise = _fixed_noise(x0.shape, x0.dtype)
    return backend.add_noise(x0, t, noise)


def estimated_shadow_of_image(
    image: np.ndarray,
    sd_estimator,
    backend: DiffusionBackend,
    t: int = LIGHT_NOISE_T,
) -> np.ndarray:
    """Shadow readout of a finished image via the light-noise forward pass."""
    sd_estimator.eval()
    with torch.no_grad():
        x_t = _light_noise_latent(backend, image, t)
        shadow, _ = sd_estimator(backend.features_at(x_t, t).taps)
    return shadow[0, 0].numpy()


def toy_cvs(
    image_a: np.ndarray,
    image_b: np.ndarray,
    id_estimator: IDEstimator,
    backend: DiffusionBackend,
    t: int = LIGHT_NOISE_T,
) -> float:
    """Cosine similarity of identity embeddings for two images in [-1, 1]."""
    id_estimator.eval()
    with torch.no_grad():
        emb_a = id_estimator(backend.features_at(_light_noise_latent(backend, image_a, t), t).taps)
        emb_b = id_estimator(backend.features_at(_light_noise_latent(backend, image_b, t), t).taps)
    return float((emb_a * emb_b).sum())


def shadow_compliance(
    result: ControlledResult,
    sd_estimator,
    backend: DiffusionBackend,
    t: int = LIGHT_NOISE_T,
) -> float:
    """L1 between the final image's estimated shadow and the stored target (lower is better)."""
    shadow = estimated_shadow_of_image(result.image, sd_estimator, backend, t)
    return float(np.abs(shadow - result.target_shadow.grid).mean())


@dataclass
class AblationReport:
    schema_version: int
    seeds: list[int]
    conds: list[int]
    control: dict
    rows: dict[str, dict] = field(default_factory=dict)

    def add_row(self, tag: str, seeds: list[int], metrics: dict) -> None:
        if seeds != self.seeds:
            raise ValueError(f"variant {tag} was evaluated on a different seed set")
        self.rows[tag] = metrics

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "seeds": self.seeds,
            "conds": self.conds,
            "control": self.control,
            "rows": self.rows,
            "notes": (
                "quality column is mean |delta| outside the controlled region vs the "
                "strength-0 image; perceptual CLIP metrics are not reproduced at this scale"
            ),
        }

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))

    def markdown_table(self) -> str:
        header = "| variant | shadow compliance (L1, lower better) | identity retention (toy CVS) | uncontrolled-region deviation |"
        sep = "|---|---|---|---|"
        lines = [header, sep]
        for tag in sorted(self.rows):
            row = self.rows[tag]
            dev = row.get("uncontrolled_deviation")
            dev_text = f"{dev:.4f}" if dev is not None else "n/a"
            lines.append(
                f"| {tag} | {row['shadow_compliance']:.4f} | {row['toy_cvs']:.4f} | {dev_text} |"
            )
        return "\n".join(lines)


def run_ablation(
    variants: list[str],
    n_seeds: int,
    stack: GuidanceStack,
    control: ShadowControl,
    base_gcfg: GuidanceConfig | None = None,
    scfg: SamplerConfig | None = None,
    conds: list[int] | None = None,
    seed0: int = 100,
    out_dir: str | Path | None = None,
    log=None,
) -> AblationReport:
    """Evaluate variants on identical (seed, cond, control) tuples.

    Requires the variant-specific estimators to be present in the stack;
    missing ones are reported explicitly before any generation runs.
    """
    base_gcfg = base_gcfg or GuidanceConfig()
    scfg = scfg or SamplerConfig()
    catalog = ablation_variants()
    unknown = [v for v in variants if v not in catalog]
    if unknown:
        raise ValueError(f"unknown ablation variants: {unknown}")

    missing: dict[str, list[str]] = {}
    for tag in variants:
        for need in catalog[tag].requirements():
            if getattr(stack, need) is None:
                missing.setdefault(tag, []).append(need)
    if missing:
        raise ValueError(f"variants missing required checkpoints: {missing}")

    seeds = [seed0 + i for i in range(n_seeds)]
    conds = conds or [i % stack.backend.num_classes for i in range(n_seeds)]

    # Strength-0 replays give the per-seed reference image for identity
    # retention and uncontrolled-region deviation.
    baselines = {}
    for seed, cond in zip(seeds, conds):
        baselines[seed] = stack.backend.generate(cond, seed, scfg)
        if log is not None:
            log(f"baseline seed {seed} done")

    mask = control.mask if control.mode == "mask" else None
    outside = None
    if mask is not None and (mask == 0).any():
        outside = mask == 0

    report = AblationReport(
        schema_version=REPORT_SCHEMA_VERSION,
        seeds=seeds,
        conds=list(conds),
        control=control.to_dict(),
    )
    for tag in variants:
        gcfg = catalog[tag].apply(base_gcfg)
        compliance, cvs, deviation = [], [], []
        for seed, cond in zip(seeds, conds):
            result = generate_with_control(cond, seed, control, gcfg, scfg, stack)
            compliance.append(shadow_compliance(result, stack.sd, stack.backend))
            cvs.append(toy_cvs(result.image, baselines[seed], stack.id, stack.backend))
            if outside is not None:
                deviation.append(float(np.abs(result.image - baselines[seed])[outside].mean()))
            if out_dir is not None:
                result.save(Path(out_dir) / tag / f"seed_{seed}")
        metrics = {
            "shadow_compliance": float(np.mean(compliance)),
            "toy_cvs": float(np.mean(cvs)),
            "uncontrolled_deviation": float(np.mean(deviation)) if deviation else None,
            "per_seed": {
                "shadow_compliance": compliance,
                "toy_cvs": cvs,
            },
        }
        report.add_row(tag, seeds, metrics)
        if log is not None:
            log(f"variant {tag}: compliance {metrics['shadow_compliance']:.4f} cvs {metrics['toy_cvs']:.4f}")

    if out_dir is not None:
        report.save(Path(out_dir) / "ablation_report.json")
        (Path(out_dir) / "ablation_report.md").write_text(report.markdown_table() + "\n")
    return report
