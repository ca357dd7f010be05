"""Demo 2: fitting a radiance field.

Trains a small field on the figurine scene for a couple of minutes and shows
the reconstruction quality climbing. The full-quality settings used by the
acceptance pipeline are in scenescrub.presets (20k steps, ~17 min on CPU);
here we run 1500 steps at reduced resolution for a quick look.
"""

from pathlib import Path

import numpy as np

from scenescrub.datasets import save_image_png
from scenescrub.field import RadianceField, render_view
from scenescrub.metrics import psnr
from scenescrub.presets import desk_field_config
from scenescrub.scenes import bundled_scene, default_trajectory, make_pair
from scenescrub.training import TrainConfig, train

OUT = Path(__file__).parent / "out" / "02_training"


def main():
    scene = bundled_scene("figurine")
    trajectory = default_trajectory(scene, n_views=12, resolution=(32, 32))
    original, _, _ = make_pair(scene, trajectory)

    config = desk_field_config(scene.near, scene.far)
    field = RadianceField.create(config, seed=0)

    OUT.mkdir(parents=True, exist_ok=True)
    for stage, steps in enumerate((300, 600, 600)):
        cfg = TrainConfig(steps=steps, batch_rays=160, lr=2e-3, lr_final=5e-4,
                          seed=stage, log_every=200)
        field, history = train(field, original, cfg)
        img, depth = render_view(field, trajectory[6])
        quality = psnr(img, original.views[6].image)
        norm = np.clip((depth - scene.near) / (scene.far - scene.near), 0, 1)
        strip = np.concatenate([original.views[6].image, img,
                                np.repeat(norm[..., None], 3, axis=2)], axis=1)
        save_image_png(OUT / f"stage{stage}.png", strip)
        print(f"after {sum((300, 600, 600)[:stage + 1]):>5d} steps: "
              f"view-6 PSNR {quality:5.2f} dB (loss {history[-1]['loss']:.4f})")

    field.save(OUT / "field.npz")
    print(f"\ncheckpoint + target|render|depth strips under {OUT}")


if __name__ == "__main__":
    main()
