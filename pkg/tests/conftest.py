"""Shared fixtures: disk-cached trained stacks so repeated runs skip training.

Two stacks exist. The micro stack (tiny corpus, short trainings) backs
service/CLI/guidance plumbing tests. The full stack is the desk-scale
configuration the acceptance criteria run against: the 200-identity corpus,
a trained denoiser, and all four readouts. Both are cached under .cache/
keyed by a hash of their build spec; delete the directory to force a rebuild.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import pytest

CACHE_ROOT = Path(os.environ.get("SHADOWSTEER_TEST_CACHE", Path(__file__).parent.parent / ".cache"))

# "rev" is a cache-buster: bump it whenever generator or estimator code
# changes in a way that invalidates previously trained stacks.
MICRO_SPEC = {
    "rev": 2,
    "dataset": {"n_identities": 8, "lights_per_identity": 3, "size": 32, "seed": 31},
    "diffusion": {"steps": 300, "batch_size": 8, "lr": 1e-3, "base_channels": 16, "seed": 0},
    "sd": {"max_epochs": 30, "seed": 0},
    "id": {"batch_size": 3, "max_epochs": 10, "seed": 0},
}

FULL_SPEC = {
    "rev": 2,
    "dataset": {"n_identities": 200, "lights_per_identity": 6, "size": 32, "seed": 1},
    "diffusion": {"steps": 4000, "batch_size": 16, "lr": 2e-4, "base_channels": 32, "seed": 0},
    "sd": {"max_epochs": 12, "seed": 0},
    "id": {"batch_size": 3, "max_epochs": 12, "seed": 0},
    "sd_output": {"max_epochs": 12, "seed": 0},
    "rgb": {"max_epochs": 12, "seed": 0},
}


@dataclass
class StackPaths:
    root: Path
    manifest_path: Path
    diffusion: Path
    sd: Path
    id: Path
    sd_output: Path | None = None
    rgb: Path | None = None

    def load_manifest(self):
        from shadowsteer.scenes import load_manifest

        return load_manifest(self.manifest_path)

    def load_stack(self):
        from shadowsteer.guidance import load_stack

        return load_stack(
            self.diffusion,
            self.sd,
            self.id,
            sd_output_ckpt=self.sd_output if self.sd_output and self.sd_output.exists() else None,
            rgb_ckpt=self.rgb if self.rgb and self.rgb.exists() else None,
        )


def _spec_key(spec: dict) -> str:
    return hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).hexdigest()[:16]


def build_stack(name: str, spec: dict, log=print) -> StackPaths:
    from shadowsteer.diffusion import DiffusionTrainConfig, train_diffusion
    from shadowsteer.estimators import (
        EstimatorTrainConfig,
        train_id_estimator,
        train_rgb_estimator,
        train_sd_estimator,
    )
    from shadowsteer.scenes import build_dataset, load_manifest

    root = CACHE_ROOT / f"{name}-{_spec_key(spec)}"
    paths = StackPaths(
        root=root,
        manifest_path=root / "dataset" / "manifest.json",
        diffusion=root / "diffusion.pt",
        sd=root / "sd.pt",
        id=root / "id.pt",
        sd_output=root / "sd_output.pt" if "sd_output" in spec else None,
        rgb=root / "rgb.pt" if "rgb" in spec else None,
    )
    meta_path = root / "meta.json"
    if meta_path.exists():
        return paths

    log(f"[stack:{name}] building under {root} (cached for later runs)")
    root.mkdir(parents=True, exist_ok=True)
    summaries = {}
    build_dataset(out_dir=root / "dataset", overwrite=True, **spec["dataset"])
    manifest = load_manifest(paths.manifest_path)

    log(f"[stack:{name}] training diffusion backend ...")
    summaries["diffusion"] = train_diffusion(
        manifest, DiffusionTrainConfig(**spec["diffusion"]), paths.diffusion, log=log
    )
    summaries["diffusion"].pop("loss_history", None)

    log(f"[stack:{name}] training shadow-depth estimator ...")
    summaries["sd"] = train_sd_estimator(
        manifest, paths.diffusion, EstimatorTrainConfig(**spec["sd"]), paths.sd, log=log
    )
    log(f"[stack:{name}] training identity estimator ...")
    summaries["id"] = train_id_estimator(
        manifest, paths.diffusion, EstimatorTrainConfig(**spec["id"]), paths.id, log=log
    )
    if "sd_output" in spec:
        log(f"[stack:{name}] training output-feature shadow estimator ...")
        summaries["sd_output"] = train_sd_estimator(
            manifest,
            paths.diffusion,
            EstimatorTrainConfig(**spec["sd_output"]),
            paths.sd_output,
            feature_source="output",
            log=log,
        )
    if "rgb" in spec:
        log(f"[stack:{name}] training RGB-space shadow estimator ...")
        summaries["rgb"] = train_rgb_estimator(
            manifest, paths.diffusion, EstimatorTrainConfig(**spec["rgb"]), paths.rgb, log=log
        )

    meta_path.write_text(json.dumps({"spec": spec, "summaries": summaries}, indent=1, default=str))
    return paths


@pytest.fixture(scope="session")
def micro_stack_paths() -> StackPaths:
    return build_stack("micro", MICRO_SPEC)


@pytest.fixture(scope="session")
def full_stack_paths() -> StackPaths:
    return build_stack("full", FULL_SPEC)


@pytest.fixture(scope="session")
def micro_stack(micro_stack_paths):
    return micro_stack_paths.load_stack()


@pytest.fixture(scope="session")
def full_stack(full_stack_paths):
    return full_stack_paths.load_stack()
