"""Train the complete toy stack end to end at reduced scale.

Corpus -> denoiser -> shadow-depth readout -> identity readout. At this
demo scale (32 identities, 1200 training steps) everything finishes in a few
minutes on a laptop CPU; expect weaker numbers than the full 200x6 build the
acceptance suite uses. Checkpoints land in demos/out/03/ and are what the
other demos load.
"""

from pathlib import Path

from shadowsteer import (
    DiffusionTrainConfig,
    EstimatorTrainConfig,
    build_dataset,
    train_diffusion,
    train_id_estimator,
    train_sd_estimator,
)

out = Path(__file__).parent / "out" / "03"
out.mkdir(parents=True, exist_ok=True)

manifest = build_dataset(
    n_identities=32, lights_per_identity=4, size=32, out_dir=out / "dataset", seed=1, overwrite=True
)
print(f"corpus: {manifest.n_samples} samples")

summary = train_diffusion(
    manifest,
    DiffusionTrainConfig(steps=1200, batch_size=16, lr=3e-4, seed=0),
    out / "diffusion.pt",
    log=print,
)
print(f"denoiser probe loss {summary['initial_probe_loss']:.3f} -> {summary['final_probe_loss']:.3f}")

sd = train_sd_estimator(
    manifest, out / "diffusion.pt", EstimatorTrainConfig(max_epochs=8, seed=0), out / "sd.pt", log=print
)
print(f"shadow L1 {sd['val']['shadow_l1']:.4f} vs constant baseline {sd['baselines']['shadow']:.4f}")

ident = train_id_estimator(
    manifest,
    out / "diffusion.pt",
    EstimatorTrainConfig(batch_size=3, max_epochs=8, seed=0),
    out / "id.pt",
    log=print,
)
print(f"identity triplet accuracy {ident['val']['triplet_accuracy']:.3f}")
print(f"checkpoints in {out}")
