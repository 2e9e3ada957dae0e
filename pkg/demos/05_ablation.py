"""Design-necessity study at demo scale.

Compares the full method against late intervention and the L1 identity
constraint on a handful of seeds (the acceptance suite runs all seven
variants on 20 seeds). Requires the checkpoints from 03_train_toy_stack.py.
"""

from pathlib import Path

import numpy as np

from shadowsteer import ShadowControl, load_stack, run_ablation

stack_dir = Path(__file__).parent / "out" / "03"
if not (stack_dir / "diffusion.pt").exists():
    raise SystemExit("run demos/03_train_toy_stack.py first")

out = Path(__file__).parent / "out" / "05"
stack = load_stack(stack_dir / "diffusion.pt", stack_dir / "sd.pt", stack_dir / "id.pt")

size = stack.backend.image_size
control = ShadowControl(mode="mask", mask=np.ones((size, size)), darkness=1.0, strength=1.0)

report = run_ablation(
    ["a_full", "c_last_step", "f_l1_input"],
    n_seeds=5,
    stack=stack,
    control=control,
    out_dir=out,
    log=print,
)
print()
print(report.markdown_table())
print(f"\nreport at {out / 'ablation_report.json'}")
