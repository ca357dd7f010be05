"""Demo 1: the synthetic scene oracle.

Builds the three bundled scenes, renders an original/removed dataset pair
along the standard 24-view arc, and writes images, depth maps and the exact
object masks to demos/out/01_scenes/.
"""

from pathlib import Path

import numpy as np

from scenescrub.datasets import save_dataset, save_image_png, save_mask_png
from scenescrub.scenes import BUNDLED_SCENES, bundled_scene, default_trajectory, make_pair

OUT = Path(__file__).parent / "out" / "01_scenes"


def main():
    for name in BUNDLED_SCENES:
        scene = bundled_scene(name)
        trajectory = default_trajectory(scene, n_views=24)
        original, removed, true_masks = make_pair(scene, trajectory)

        out = OUT / name
        save_dataset(original, out / "original")
        save_dataset(removed, out / "removed")

        # side-by-side strip for a quick look: original | removed | mask
        v = 12
        mask_rgb = np.repeat(true_masks[v][..., None].astype(np.float32), 3, axis=2)
        strip = np.concatenate([original.views[v].image,
                                removed.views[v].image, mask_rgb], axis=1)
        save_image_png(out / "preview.png", strip)
        save_mask_png(out / "true_mask_center.png", true_masks[v])

        masked_px = [(m == 0).sum() for m in true_masks]
        print(f"{name}: 24 views at {original.resolution}, removable object "
              f"'{scene.removable_id}' covers {min(masked_px)}..{max(masked_px)} px per view")
    print(f"\nwrote datasets + previews under {OUT}")


if __name__ == "__main__":
    main()
