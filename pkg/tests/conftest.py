"""Shared fixtures: a tiny trained world for CLI/server tests."""

import numpy as np
import pytest

from scenescrub.datasets import save_dataset
from scenescrub.field import FieldConfig, RadianceField
from scenescrub.scenes import bundled_scene, default_trajectory, make_pair
from scenescrub.training import TrainConfig, train

TINY_RES = 24
TINY_VIEWS = 3


@pytest.fixture(scope="session")
def tiny_world(tmp_path_factory):
    """A 3-view 24px dataset pair plus a briefly trained checkpoint."""
    root = tmp_path_factory.mktemp("tiny_world")
    scene = bundled_scene("figurine")
    traj = default_trajectory(scene, n_views=TINY_VIEWS, resolution=(TINY_RES, TINY_RES))
    original, removed, true_masks = make_pair(scene, traj)
    save_dataset(original, root / "original")
    save_dataset(removed, root / "removed")

    cfg = FieldConfig(near=scene.near, far=scene.far, hidden_width=32,
                      hidden_layers=2, skip_at=1, pos_levels=4, dir_levels=2,
                      color_width=32, n_coarse=10, n_fine=6, pos_scale=0.35)
    field = RadianceField.create(cfg, seed=0)
    train(field, original, TrainConfig(steps=300, batch_rays=96, lr=2e-3,
                                       lr_final=5e-4, seed=0, log_every=100))
    field.save(root / "checkpoint.npz")
    np.save(root / "user_mask.npy", true_masks[0])
    return {"root": root, "scene": scene, "trajectory": traj,
            "true_masks": true_masks, "field": field,
            "dataset": root / "original", "checkpoint": root / "checkpoint.npz"}
