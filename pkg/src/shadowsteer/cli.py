"""Command-line front door; every subcommand is a thin wrapper over one library call.

Flag resolution order: explicit flags win, then values from --config (a JSON
object keyed by flag name), then SD_DIRECTOR_* environment variables, then
defaults. Exits 0 on success and 2 on validation errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

VALIDATION_EXIT = 2

_ENV_KEYS = {
    "diffusion_ckpt": "SD_DIRECTOR_DIFFUSION_CKPT",
    "sd_ckpt": "SD_DIRECTOR_SD_CKPT",
    "id_ckpt": "SD_DIRECTOR_ID_CKPT",
    "sd_output_ckpt": "SD_DIRECTOR_SD_OUTPUT_CKPT",
    "rgb_ckpt": "SD_DIRECTOR_RGB_CKPT",
    "run_store": "SD_DIRECTOR_RUN_STORE",
    "port": "SD_DIRECTOR_PORT",
    "pool_size": "SD_DIRECTOR_POOL_SIZE",
}

_VARIANT_ALIASES = {
    "a": "a_full",
    "b": "b_latter_steps",
    "c": "c_last_step",
    "d": "d_unet_output_features",
    "e": "e_rgb_space",
    "f": "f_l1_input",
    "g": "g_l1_output",
}


def _resolve(args: argparse.Namespace, key: str, default=None, cast=None):
    """explicit flag > config file > environment > default."""
    value = getattr(args, key, None)
    if value is None:
        value = getattr(args, "_config_data", {}).get(key)
    if value is None and key in _ENV_KEYS:
        value = os.environ.get(_ENV_KEYS[key])
    if value is None:
        value = default
    if value is not None and cast is not None:
        value = cast(value)
    return value


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file whose values fill unset flags")


def _add_stack_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--diffusion-ckpt", dest="diffusion_ckpt")
    parser.add_argument("--sd-ckpt", dest="sd_ckpt")
    parser.add_argument("--id-ckpt", dest="id_ckpt")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shadowsteer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="render the paired synthetic corpus")
    _add_common(p)
    p.add_argument("--identities", type=int, default=None)
    p.add_argument("--lights", type=int, default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("train-diffusion", help="train the toy denoiser")
    _add_common(p)
    p.add_argument("--manifest", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume-from", dest="resume_from", default=None)

    for name, source in (("train-sd", "internal"), ("train-id", None)):
        p = sub.add_parser(name, help=f"train the {'shadow-depth' if source else 'identity'} readout")
        _add_common(p)
        p.add_argument("--manifest", default=None)
        p.add_argument("--diffusion-ckpt", dest="diffusion_ckpt", default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--seed", type=int, default=None)
        if source:
            p.add_argument(
                "--feature-source",
                dest="feature_source",
                choices=["internal", "output", "rgb"],
                default=None,
            )

    p = sub.add_parser("generate", help="one (optionally controlled) generation")
    _add_common(p)
    _add_stack_flags(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--cond", type=int, default=None)
    p.add_argument("--mask", help="path to a binary mask PNG", default=None)
    p.add_argument("--darkness", type=float, default=None)
    p.add_argument("--light", help="x,y,z light position", default=None)
    p.add_argument("--strength", type=float, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--intervention-step", dest="intervention_step", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)

    p = sub.add_parser("ablate", help="run the design-necessity study")
    _add_common(p)
    _add_stack_flags(p)
    p.add_argument("--sd-output-ckpt", dest="sd_output_ckpt", default=None)
    p.add_argument("--rgb-ckpt", dest="rgb_ckpt", default=None)
    p.add_argument("--variants", default=None, help="comma list, e.g. a,c or a_full,c_last_step")
    p.add_argument("--seeds", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("serve", help="start the HTTP service")
    _add_common(p)
    _add_stack_flags(p)
    p.add_argument("--run-store", dest="run_store", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--pool-size", dest="pool_size", type=int, default=None)

    return parser


def _cmd_synth_data(args) -> int:
    from .scenes import build_dataset

    out = _resolve(args, "out")
    if out is None:
        print("synth-data: --out is required", file=sys.stderr)
        return VALIDATION_EXIT
    manifest = build_dataset(
        n_identities=_resolve(args, "identities", 200, int),
        lights_per_identity=_resolve(args, "lights", 6, int),
        size=_resolve(args, "size", 32, int),
        out_dir=out,
        seed=_resolve(args, "seed", 0, int),
        overwrite=bool(args.overwrite),
    )
    print(f"wrote {manifest.n_samples} samples to {out} ({len(manifest.train)} train / {len(manifest.val)} val)")
    return 0


def _cmd_train_diffusion(args) -> int:
    from .diffusion.training import DiffusionTrainConfig, train_diffusion
    from .scenes import load_manifest

    manifest_path = _resolve(args, "manifest")
    out = _resolve(args, "out")
    if manifest_path is None or out is None:
        print("train-diffusion: --manifest and --out are required", file=sys.stderr)
        return VALIDATION_EXIT
    config = DiffusionTrainConfig(
        steps=_resolve(args, "steps", 5000, int),
        batch_size=_resolve(args, "batch_size", 16, int),
        lr=_resolve(args, "lr", 2e-4, float),
        seed=_resolve(args, "seed", 0, int),
    )
    manifest = load_manifest(Path(manifest_path) / "manifest.json" if Path(manifest_path).is_dir() else manifest_path)
    summary = train_diffusion(manifest, config, out, resume_from=_resolve(args, "resume_from"), log=print)
    print(
        f"probe loss {summary['initial_probe_loss']:.4f} -> {summary['final_probe_loss']:.4f}; "
        f"checkpoint at {out}"
    )
    return 0


def _load_manifest_arg(path_str: str):
    from .scenes import load_manifest

    path = Path(path_str)
    return load_manifest(path / "manifest.json" if path.is_dir() else path)


def _cmd_train_sd(args) -> int:
    from .estimators import EstimatorTrainConfig, train_rgb_estimator, train_sd_estimator

    manifest_path = _resolve(args, "manifest")
    diffusion = _resolve(args, "diffusion_ckpt")
    out = _resolve(args, "out")
    if not all((manifest_path, diffusion, out)):
        print("train-sd: --manifest, --diffusion-ckpt, --out are required", file=sys.stderr)
        return VALIDATION_EXIT
    config = EstimatorTrainConfig(
        lr=_resolve(args, "lr", 1e-3, float),
        max_epochs=_resolve(args, "epochs", 12, int),
        seed=_resolve(args, "seed", 0, int),
    )
    manifest = _load_manifest_arg(manifest_path)
    source = _resolve(args, "feature_source", "internal")
    if source == "rgb":
        summary = train_rgb_estimator(manifest, diffusion, config, out, log=print)
    else:
        summary = train_sd_estimator(manifest, diffusion, config, out, feature_source=source, log=print)
    print(f"final val: {summary['val']}")
    return 0


def _cmd_train_id(args) -> int:
    from .estimators import EstimatorTrainConfig, train_id_estimator

    manifest_path = _resolve(args, "manifest")
    diffusion = _resolve(args, "diffusion_ckpt")
    out = _resolve(args, "out")
    if not all((manifest_path, diffusion, out)):
        print("train-id: --manifest, --diffusion-ckpt, --out are required", file=sys.stderr)
        return VALIDATION_EXIT
    config = EstimatorTrainConfig(
        lr=_resolve(args, "lr", 1e-3, float),
        batch_size=3,
        max_epochs=_resolve(args, "epochs", 12, int),
        seed=_resolve(args, "seed", 0, int),
    )
    summary = train_id_estimator(_load_manifest_arg(manifest_path), diffusion, config, out, log=print)
    print(f"final val: {summary['val']}")
    return 0


def _require_stack(args, need_estimators: bool):
    from .guidance import load_stack

    diffusion = _resolve(args, "diffusion_ckpt")
    sd = _resolve(args, "sd_ckpt")
    ident = _resolve(args, "id_ckpt")
    if diffusion is None:
        raise ValueError("--diffusion-ckpt (or SD_DIRECTOR_DIFFUSION_CKPT) is required")
    if need_estimators and not (sd and ident):
        raise ValueError(
            "--sd-ckpt and --id-ckpt are required for controlled generation; "
            "train them with `shadowsteer train-sd` / `shadowsteer train-id`"
        )
    if sd and ident:
        return load_stack(
            diffusion,
            sd,
            ident,
            sd_output_ckpt=_resolve(args, "sd_output_ckpt"),
            rgb_ckpt=_resolve(args, "rgb_ckpt"),
        )
    return None


def _cmd_generate(args) -> int:
    from .diffusion.backend import DiffusionBackend, SamplerConfig
    from .geometry import LightPosition
    from .guidance import GuidanceConfig, ShadowControl, generate_with_control
    from .imageio import load_mask, save_image

    out = _resolve(args, "out")
    if out is None:
        print("generate: --out is required", file=sys.stderr)
        return VALIDATION_EXIT
    seed = _resolve(args, "seed", 0, int)
    cond = _resolve(args, "cond", 0, int)
    strength = _resolve(args, "strength", 1.0, float)
    mask_path = _resolve(args, "mask")
    light_arg = _resolve(args, "light")
    if mask_path and light_arg:
        print("generate: pass exactly one of --mask / --light", file=sys.stderr)
        return VALIDATION_EXIT

    control = None
    if mask_path:
        control = ShadowControl(
            mode="mask",
            mask=load_mask(mask_path),
            darkness=_resolve(args, "darkness", 1.0, float),
            strength=strength,
        )
    elif light_arg:
        coords = [float(v) for v in str(light_arg).split(",")]
        if len(coords) != 3:
            raise ValueError("--light expects x,y,z")
        control = ShadowControl(mode="directional_light", light=LightPosition(*coords), strength=strength)

    out_dir = Path(out)
    scfg = SamplerConfig()
    if control is None:
        diffusion = _resolve(args, "diffusion_ckpt")
        if diffusion is None:
            raise ValueError("--diffusion-ckpt (or SD_DIRECTOR_DIFFUSION_CKPT) is required")
        backend = DiffusionBackend.load_checkpoint(diffusion)
        image = backend.generate(cond, seed, scfg)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_image(out_dir / "result.png", image)
        print(f"uncontrolled generation saved to {out_dir / 'result.png'}")
        return 0

    stack = _require_stack(args, need_estimators=True)
    overrides = {}
    if _resolve(args, "intervention_step") is not None:
        overrides["intervention_step"] = _resolve(args, "intervention_step", cast=int)
    if _resolve(args, "lr") is not None:
        overrides["lr"] = _resolve(args, "lr", cast=float)
    gcfg = GuidanceConfig(**overrides)
    result = generate_with_control(cond, seed, control, gcfg, scfg, stack)
    result.save(out_dir)
    final = result.trace[-1]["total"] if result.trace else 0.0
    print(f"controlled generation saved to {out_dir} (iterations {result.iterations}, final loss {final:.4f})")
    return 0


def _cmd_ablate(args) -> int:
    from .evaluation import ablation_variants, run_ablation
    from .guidance import ShadowControl

    out = _resolve(args, "out")
    if out is None:
        print("ablate: --out is required", file=sys.stderr)
        return VALIDATION_EXIT
    raw = _resolve(args, "variants", "a,b,c,d,e,f,g")
    tags = []
    for item in str(raw).split(","):
        item = item.strip()
        tags.append(_VARIANT_ALIASES.get(item, item))
    unknown = [t for t in tags if t not in ablation_variants()]
    if unknown:
        raise ValueError(f"unknown variants: {unknown}")

    stack = _require_stack(args, need_estimators=True)
    size = stack.backend.image_size
    control = ShadowControl(mode="mask", mask=np.ones((size, size)), darkness=1.0, strength=1.0)
    report = run_ablation(
        tags,
        n_seeds=_resolve(args, "seeds", 20, int),
        stack=stack,
        control=control,
        out_dir=out,
        log=print,
    )
    print(report.markdown_table())
    print(f"report written to {Path(out) / 'ablation_report.json'}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    config = ServiceConfig.from_env(
        diffusion_ckpt=_resolve(args, "diffusion_ckpt"),
        sd_ckpt=_resolve(args, "sd_ckpt"),
        id_ckpt=_resolve(args, "id_ckpt"),
        run_store=_resolve(args, "run_store"),
        port=_resolve(args, "port", cast=int),
        pool_size=_resolve(args, "pool_size", cast=int),
    )
    app = create_app(config)
    uvicorn.run(app, host="127.0.0.1", port=config.port)
    return 0


_COMMANDS = {
    "synth-data": _cmd_synth_data,
    "train-diffusion": _cmd_train_diffusion,
    "train-sd": _cmd_train_sd,
    "train-id": _cmd_train_id,
    "generate": _cmd_generate,
    "ablate": _cmd_ablate,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        config_path = Path(args.config)
        if not config_path.exists():
            print(f"config file not found: {config_path}", file=sys.stderr)
            return VALIDATION_EXIT
        args._config_data = json.loads(config_path.read_text())
    else:
        args._config_data = {}
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, FileExistsError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VALIDATION_EXIT


if __name__ == "__main__":
    sys.exit(main())
