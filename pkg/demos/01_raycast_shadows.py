"""Ray-cast hard shadows over a heightfield and edit them with a mask.

Walks the two shadow-acquisition paths: geometric shadows from a 3D light
position, and user-mask darkening. Writes a small gallery of PNGs to
demos/out/01/.
"""

from pathlib import Path

import numpy as np

from shadowsteer import (
    BinaryMask,
    DepthMap,
    LightPosition,
    apply_shadow_mask,
    raycast_shadow,
)
from shadowsteer.imageio import save_scalar_map
from shadowsteer.scenes import identity_heightfield, sample_identity

out = Path(__file__).parent / "out" / "01"
out.mkdir(parents=True, exist_ok=True)

# A bumpy portrait-like heightfield.
depth = DepthMap(identity_heightfield(sample_identity(7), 64))
save_scalar_map(out / "depth.png", depth.grid)

# The same terrain under three lights: grazing left, grazing right, overhead.
for name, light in {
    "left": LightPosition(-3.0, 0.5, 1.4),
    "right": LightPosition(4.0, 0.5, 1.4),
    "overhead": LightPosition(0.5, 0.5, 5.0),
}.items():
    shadow = raycast_shadow(depth, light)
    save_scalar_map(out / f"shadow_{name}.png", shadow.grid)
    print(f"{name:>9}: {100 * (1 - shadow.grid.mean()):5.1f}% of pixels shadowed")

# Mask editing: darken the lower-left quadrant of the left-light shadow.
shadow = raycast_shadow(depth, LightPosition(-3.0, 0.5, 1.4))
mask = np.zeros((64, 64))
mask[32:, :32] = 1.0
for darkness in (0.5, 1.0):
    edited = apply_shadow_mask(shadow, BinaryMask(mask), darkness)
    save_scalar_map(out / f"masked_{darkness}.png", edited.grid)

print(f"gallery written to {out}")
