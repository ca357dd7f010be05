"""Evaluator: PSNR arithmetic, monotonicity, report generation."""

import csv

import numpy as np
import pytest

from scenescrub.field import FieldConfig, RadianceField
from scenescrub.metrics import PSNR_CAP, evaluate_job, masked_depth_error, psnr
from scenescrub.scenes import bundled_scene, default_trajectory


def test_identical_images_hit_cap():
    img = np.random.default_rng(0).random((8, 8, 3))
    assert psnr(img, img) == PSNR_CAP


def test_known_mse_gives_20db():
    a = np.zeros((10, 10))
    b = np.full((10, 10), 0.1)  # mse = 0.01
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)


def test_psnr_matches_direct_formula_on_noise():
    rng = np.random.default_rng(1)
    clean = rng.random((16, 16, 3))
    noisy = np.clip(clean + rng.normal(0, 0.05, clean.shape), 0, 1)
    mse = np.mean((clean - noisy) ** 2)
    assert psnr(clean, noisy) == pytest.approx(10 * np.log10(1 / mse), rel=1e-12)


def test_psnr_region_selects_zero_pixels():
    a = np.zeros((4, 4))
    b = np.zeros((4, 4))
    b[0, 0] = 0.5
    region = np.ones((4, 4), np.uint8)
    region[0, 0] = 0
    assert psnr(a, b, region=region) == pytest.approx(10 * np.log10(1 / 0.25))
    region2 = np.ones((4, 4), np.uint8)
    region2[1, 1] = 0
    assert psnr(a, b, region=region2) == PSNR_CAP


def test_psnr_monotone_in_mse():
    a = np.zeros((8, 8))
    values = [psnr(a, np.full((8, 8), v)) for v in (0.05, 0.1, 0.2, 0.4)]
    assert values == sorted(values, reverse=True)


def test_psnr_validation():
    with pytest.raises(ValueError, match="shapes"):
        psnr(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError, match="region"):
        psnr(np.zeros((2, 2)), np.zeros((2, 2)), region=np.ones((2, 2)))


def test_masked_depth_error():
    da = np.full((4, 4), 3.0)
    db = np.full((4, 4), 3.5)
    region = np.ones((4, 4), np.uint8)
    region[1:3, 1:3] = 0
    assert masked_depth_error(da, db, region) == pytest.approx(0.5)


def test_evaluate_job_self_comparison_and_outputs(tmp_path):
    scene = bundled_scene("figurine")
    traj = default_trajectory(scene, n_views=2, resolution=(16, 16))
    cfg = FieldConfig(near=scene.near, far=scene.far, hidden_width=32,
                      hidden_layers=2, skip_at=1, pos_levels=4, dir_levels=2,
                      color_width=32, n_coarse=8, n_fine=4)
    field = RadianceField.create(cfg, seed=0)
    masks = []
    for _ in traj:
        m = np.ones((16, 16), np.uint8)
        m[6:10, 6:10] = 0
        masks.append(m)
    report = evaluate_job(field, field, traj, masks, out_dir=tmp_path,
                          consistency_pairs=[(0, 1)])
    assert report["psnr_full"] == PSNR_CAP
    assert report["psnr_masked"] == PSNR_CAP
    assert report["depth_err_masked"] == 0.0
    assert (tmp_path / "report.csv").exists()
    assert (tmp_path / "report.txt").exists()
    rows = list(csv.DictReader(open(tmp_path / "report.csv")))
    assert len(rows) == 2
    assert {"view", "psnr_full", "psnr_masked", "depth_err_masked"} <= set(rows[0])
