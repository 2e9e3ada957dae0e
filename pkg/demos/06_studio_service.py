"""Drive the HTTP service the way the studio UI does, from a script.

Starts the app in-process, creates a session, uploads a mask control, runs a
generation job, and fetches the before/after artifacts. Requires the
checkpoints from 03_train_toy_stack.py.
"""

import time
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

from shadowsteer.imageio import mask_to_base64_png
from shadowsteer.service import ServiceConfig, create_app

stack_dir = Path(__file__).parent / "out" / "03"
if not (stack_dir / "diffusion.pt").exists():
    raise SystemExit("run demos/03_train_toy_stack.py first")

out = Path(__file__).parent / "out" / "06"
out.mkdir(parents=True, exist_ok=True)

config = ServiceConfig(
    diffusion_ckpt=str(stack_dir / "diffusion.pt"),
    sd_ckpt=str(stack_dir / "sd.pt"),
    id_ckpt=str(stack_dir / "id.pt"),
    run_store=str(out / "store"),
    pool_size=1,
)

mask = np.zeros((32, 32))
mask[10:26, 4:20] = 1.0

with TestClient(create_app(config)) as client:
    print("health:", client.get("/healthz").json())
    session = client.post("/sessions", json={"cond": 2, "seed": 13}).json()
    client.put(
        f"/sessions/{session['id']}/control",
        json={"mode": "mask", "mask_png_base64": mask_to_base64_png(mask), "darkness": 1.0, "strength": 1.0},
    )
    job = client.post(f"/sessions/{session['id']}/jobs").json()
    while True:
        job = client.get(f"/jobs/{job['id']}").json()
        print(f"  job {job['state']} {job['progress']['step']}/{job['progress']['total']}")
        if job["state"] in ("done", "failed"):
            break
        time.sleep(1.0)
    assert job["state"] == "done", job.get("error")
    for name in ("result.png", "target_shadow.png", "est_shadow_before.png", "est_shadow_after.png"):
        (out / name).write_bytes(client.get(f"/jobs/{job['id']}/artifacts/{name}").content)
    print(f"artifacts copied to {out}")
