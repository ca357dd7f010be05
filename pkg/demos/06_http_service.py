"""Demo 6: driving the HTTP service.

Spins the FastAPI app up in-process, walks the browse -> mask -> job ->
result flow the web UI uses, and prints each response. The same app serves
over the network via `scenescrub serve`.
"""

import base64
import io
import time
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient
from PIL import Image

from scenescrub.datasets import save_dataset
from scenescrub.field import RadianceField
from scenescrub.presets import desk_field_config
from scenescrub.scenes import bundled_scene, default_trajectory, make_pair
from scenescrub.server import create_app
from scenescrub.training import TrainConfig, train

OUT = Path(__file__).parent / "out" / "06_service"


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    scene = bundled_scene("figurine")
    trajectory = default_trajectory(scene, n_views=4, resolution=(24, 24))
    original, _, true_masks = make_pair(scene, trajectory)
    save_dataset(original, OUT / "dataset")

    print("pre-training a small checkpoint (600 steps)...")
    field = RadianceField.create(desk_field_config(scene.near, scene.far), seed=0)
    train(field, original, TrainConfig(steps=600, batch_rays=128, lr=2e-3,
                                       lr_final=5e-4, seed=0))
    field.save(OUT / "checkpoint.npz")

    app = create_app(checkpoint=OUT / "checkpoint.npz", dataset=OUT / "dataset",
                     jobs_dir=OUT / "jobs")
    with TestClient(app) as client:
        views = client.get("/views").json()
        print(f"GET /views -> {len(views['views'])} poses at {views['resolution']}")

        png = client.get("/render", params={"view": 0, "level": "fine"})
        print(f"GET /render?view=0 -> {len(png.content)} bytes of PNG")

        # the mask a browser would upload: 0 = remove, 255 = keep
        mask = (true_masks[2] * 255).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(mask, mode="L").save(buf, format="PNG")
        job = client.post("/jobs", json={
            "view_index": 2,
            "mask_png_b64": base64.b64encode(buf.getvalue()).decode(),
            "config": {"steps": 60, "mode": "ours", "seed": 0},
        }).json()
        print(f"POST /jobs -> {job}")

        while True:
            status = client.get(f"/jobs/{job['job_id']}").json()
            print(f"  state={status['state']} step={status['step']}/{status['total_steps']}")
            if status["state"] in ("done", "failed"):
                break
            time.sleep(1.0)

        result = client.get(f"/jobs/{job['job_id']}/result", params={"view": 2})
        (OUT / "result_view2.png").write_bytes(result.content)
        compare = client.get(f"/jobs/{job['job_id']}/compare", params={"view": 2})
        (OUT / "compare_view2.png").write_bytes(compare.content)
        print(f"result + compare PNGs under {OUT}")


if __name__ == "__main__":
    main()
