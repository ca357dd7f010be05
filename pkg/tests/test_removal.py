"""Removal optimization: loss structure, warm start, masking contracts, grids."""

import numpy as np
import pytest

from scenescrub.autodiff import mix64
from scenescrub.datasets import PosedImageSet, PosedView
from scenescrub.field import FieldConfig, RadianceField, render_view
from scenescrub.removal import (InpaintJob, _RayPool, baseline1, baseline2,
                                color_loss_all, color_loss_out, depth_loss,
                                depth_ablation_grid, inpaint, view_consistency,
                                view_count_grid)
from scenescrub.scenes import bundled_scene, default_trajectory, make_pair
from scenescrub.training import TrainConfig


RES = 20


def _setup(n_views=4):
    scene = bundled_scene("figurine")
    traj = default_trajectory(scene, n_views=n_views, resolution=(RES, RES))
    original, removed, true_masks = make_pair(scene, traj)
    cfg = FieldConfig(near=scene.near, far=scene.far, hidden_width=32,
                      hidden_layers=2, skip_at=1, pos_levels=4, dir_levels=2,
                      color_width=32, n_coarse=8, n_fine=4, pos_scale=0.35)
    field = RadianceField.create(cfg, seed=2)
    # guidance stand-in: ray-traced images/depths with true masks (exact and
    # cheap; the real pipeline produces the same container)
    views = [PosedView(traj[i].scaled((RES, RES)), original.views[i].image,
                       original.views[i].depth, true_masks[i])
             for i in range(n_views)]
    guidance = PosedImageSet(views, {"variant": "guidance", "user_view_index": 0})
    return scene, traj, field, guidance, true_masks


def _draw(guidance, views, n=24, seed=0):
    pool = _RayPool.from_views(guidance, views)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(pool), size=n)
    seeds = mix64(np.full(n, seed, dtype=np.uint64), pool.ray_ids[idx])
    return pool, idx, seeds


def test_job_validation():
    mask = np.ones((RES, RES), np.uint8)
    with pytest.raises(ValueError, match="twice"):
        InpaintJob(0, mask, all_views=(0, 1), out_views=(1, 2), depth_views=(1, 2))
    with pytest.raises(ValueError, match="mode"):
        InpaintJob(0, mask, all_views=(0,), out_views=(1,), depth_views=(1,),
                   mode="nope")
    job = InpaintJob.default_split(4, 0, mask)
    assert job.all_views == (0,)
    assert job.out_views == (1, 2, 3)
    assert job.depth_views == (1, 2, 3)
    assert set(job.all_views) | set(job.out_views) == {0, 1, 2, 3}


def test_color_loss_all_zero_when_field_matches_guidance():
    # render the field itself into the guidance container -> loss 0
    scene, traj, field, guidance, _ = _setup()
    for v, view in enumerate(guidance.views):
        img, dep = render_view(field, view.pose)
        guidance.views[v] = PosedView(view.pose, img, dep, view.mask)
    pool, idx, seeds = _draw(guidance, (0, 1), n=16)
    # evaluation renders are unjittered; redraw the loss without jitter by
    # rendering through the same deterministic path
    from scenescrub import autodiff as ad
    from scenescrub.removal import _color_term
    tape = ad.Tape()
    pt = field.bind(tape)
    # seeds irrelevant for stratified=False
    out = field.render_batch(tape, pool.origins[idx], pool.dirs[idx], params_t=pt,
                             stratified=False)
    target = tape.constant(pool.colors[idx])
    rf = ad.sub(out.color_fine, target)
    assert float(ad.sum_(ad.mul(rf, rf)).value) < 1e-10


def test_color_loss_out_equals_all_when_masks_are_ones():
    scene, traj, field, guidance, _ = _setup()
    for v in guidance.views:
        v.mask.fill(1)
    pool, idx, seeds = _draw(guidance, (1, 2), n=32)
    a = color_loss_all(field, guidance, (1, 2), (idx, seeds))
    b = color_loss_out(field, guidance, (1, 2), (idx, seeds))
    assert a == pytest.approx(b, rel=1e-6)


def test_color_loss_out_ignores_masked_guidance():
    scene, traj, field, guidance, _ = _setup()
    pool, idx, seeds = _draw(guidance, (1, 2), n=48, seed=3)
    base = color_loss_out(field, guidance, (1, 2), (idx, seeds))
    # perturb guidance colors inside the mask: loss must not move at all
    for v in (1, 2):
        img = guidance.views[v].image.copy()
        img[guidance.views[v].mask == 0] = 0.123
        guidance.views[v] = PosedView(guidance.views[v].pose, img,
                                      guidance.views[v].depth,
                                      guidance.views[v].mask)
    after = color_loss_out(field, guidance, (1, 2), (idx, seeds))
    assert after == base


def test_color_loss_out_all_masked_rays_zero():
    scene, traj, field, guidance, _ = _setup()
    for v in guidance.views:
        v.mask.fill(0)
    pool, idx, seeds = _draw(guidance, (1,), n=16)
    assert color_loss_out(field, guidance, (1,), (idx, seeds)) == 0.0


def test_depth_loss_has_coarse_and_fine_terms():
    scene, traj, field, guidance, _ = _setup()
    pool, idx, seeds = _draw(guidance, (1, 2), n=16)
    val = depth_loss(field, guidance, (1, 2), (idx, seeds))
    from scenescrub import autodiff as ad
    tape = ad.Tape()
    pt = field.bind(tape)
    out = field.render_batch(tape, pool.origins[idx], pool.dirs[idx], params_t=pt,
                             stratified=True, ray_seeds=seeds)
    scale = 1.0 / (field.config.far - field.config.near)
    coarse = np.mean(((out.depth_coarse.value - pool.depths[idx]) * scale) ** 2,
                     dtype=np.float64)
    fine = np.mean(((out.depth_fine.value - pool.depths[idx]) * scale) ** 2,
                   dtype=np.float64)
    assert val == pytest.approx(float(coarse + fine), rel=1e-4)
    # zeroing the coarse term changes the value: both terms are present
    assert val != pytest.approx(float(fine), rel=1e-3)


def test_depth_loss_hand_computed_single_ray():
    scene, traj, field, guidance, _ = _setup()
    pool, idx, seeds = _draw(guidance, (1,), n=1, seed=9)
    from scenescrub import autodiff as ad
    tape = ad.Tape()
    pt = field.bind(tape)
    out = field.render_batch(tape, pool.origins[idx], pool.dirs[idx], params_t=pt,
                             stratified=True, ray_seeds=seeds)
    scale = 1.0 / (field.config.far - field.config.near)
    dstar = pool.depths[idx][0]
    want = ((float(out.depth_coarse.value[0]) - dstar) * scale) ** 2 \
        + ((float(out.depth_fine.value[0]) - dstar) * scale) ** 2
    got = depth_loss(field, guidance, (1,), (idx, seeds))
    assert got == pytest.approx(want, rel=1e-4)


def test_inpaint_default_split_and_decomposition():
    scene, traj, field, guidance, _ = _setup()
    job = InpaintJob.default_split(4, 0, guidance.views[0].mask, steps=3,
                                   batch_rays=48, min_rays_per_term=8, seed=1)
    updated, history = inpaint(field, guidance, job)
    assert len(history) == 3
    for row in history:
        total = row["color_all"] + row["color_out"] + row["depth"]
        assert row["loss_total"] == pytest.approx(total, abs=1e-6)
    # input field untouched
    fresh = RadianceField.create(field.config, seed=2)
    for k in field.params:
        assert np.array_equal(field.params[k], fresh.params[k])


def test_warm_start_renders_bit_exact_at_step_zero():
    scene, traj, field, guidance, _ = _setup()
    before = render_view(field, traj[1].scaled((RES, RES)))
    copy = field.copy()
    after = render_view(copy, traj[1].scaled((RES, RES)))
    assert np.array_equal(before[0], after[0])
    assert np.array_equal(before[1], after[1])


def test_inpaint_determinism():
    scene, traj, field, guidance, _ = _setup()
    job = InpaintJob.default_split(4, 0, guidance.views[0].mask, steps=4,
                                   batch_rays=32, min_rays_per_term=8, seed=7)
    f1, h1 = inpaint(field, guidance, job)
    f2, h2 = inpaint(field, guidance, job)
    assert h1 == h2
    for k in f1.params:
        assert np.array_equal(f1.params[k], f2.params[k])


def test_color_only_has_zero_depth_history():
    scene, traj, field, guidance, _ = _setup()
    job = InpaintJob.default_split(4, 0, guidance.views[0].mask, steps=2,
                                   batch_rays=32, min_rays_per_term=8,
                                   mode="color_only")
    _, history = inpaint(field, guidance, job)
    assert all(h["depth"] == 0.0 for h in history)


def test_depth_only_has_zero_color_history():
    scene, traj, field, guidance, _ = _setup()
    job = InpaintJob.default_split(4, 0, guidance.views[0].mask, steps=2,
                                   batch_rays=32, min_rays_per_term=8,
                                   mode="depth_only")
    _, history = inpaint(field, guidance, job)
    assert all(h["color_all"] == 0.0 and h["color_out"] == 0.0 for h in history)


def test_baseline1_is_full_supervision_no_depth():
    scene, traj, field, guidance, _ = _setup()
    job = InpaintJob.default_split(4, 0, guidance.views[0].mask, steps=2,
                                   batch_rays=32, min_rays_per_term=8)
    _, history = baseline1(field, guidance, job)
    assert all(h["depth"] == 0.0 and h["color_out"] == 0.0 for h in history)
    assert all(h["color_all"] > 0.0 for h in history)


def test_baseline2_trains_fresh_field_with_masked_loss():
    scene, traj, field, guidance, _ = _setup()
    cfg = TrainConfig(steps=5, batch_rays=32, lr=1e-3, seed=4)
    updated, history = baseline2(guidance, field.config, cfg)
    assert len(history) >= 1
    # fresh field: not equal to the pre-trained one
    assert any(not np.array_equal(updated.params[k], field.params[k])
               for k in field.params)


def test_baseline2_never_sees_masked_guidance():
    scene, traj, field, guidance, _ = _setup()
    cfg = TrainConfig(steps=4, batch_rays=64, lr=1e-3, seed=4)
    f1, h1 = baseline2(guidance, field.config, cfg)
    # poison the masked-region colors: results must be bit-identical
    for v in range(len(guidance.views)):
        img = guidance.views[v].image.copy()
        img[guidance.views[v].mask == 0] = 0.777
        guidance.views[v] = PosedView(guidance.views[v].pose, img,
                                      guidance.views[v].depth,
                                      guidance.views[v].mask)
    f2, h2 = baseline2(guidance, field.config, cfg)
    assert h1 == h2
    for k in f1.params:
        assert np.array_equal(f1.params[k], f2.params[k])


def test_view_consistency_identical_pose_is_zero():
    scene, traj, field, guidance, _ = _setup()
    pose = traj[1].scaled((RES, RES))
    c = view_consistency(field, pose, pose, guidance.views[1].mask)
    assert c == pytest.approx(0.0, abs=1e-7)


def test_view_consistency_sentinel_when_nothing_visible():
    scene, traj, field, guidance, _ = _setup()
    pose = traj[0].scaled((RES, RES))
    c = view_consistency(field, pose, pose, np.ones((RES, RES), np.uint8))
    assert np.isnan(c)


def test_depth_ablation_grid_modes():
    job = InpaintJob.default_split(4, 0, np.ones((RES, RES), np.uint8))
    grid = depth_ablation_grid(job)
    assert [j.mode for j in grid] == ["color_only", "depth_only", "ours"]


def test_view_count_grid_settings():
    job = InpaintJob.default_split(24, 5, np.ones((RES, RES), np.uint8))
    grid = view_count_grid(job, 24, seed=3)
    sampled = tuple(i for i in range(24) if i != 5)
    # setting 1: user view only
    assert grid[0].all_views == (5,)
    assert grid[0].out_views == sampled
    # setting 2: three random sampled views; the rest of the sampled set is out
    assert len(grid[1].all_views) == 3
    assert set(grid[1].all_views) <= set(sampled)
    assert set(grid[1].out_views) == set(sampled) - set(grid[1].all_views)
    # setting 3: all sampled views; user view is the only out view
    assert grid[2].all_views == sampled
    assert grid[2].out_views == (5,)


def test_min_rays_floor_applies():
    from scenescrub.removal import _split_batch
    job = InpaintJob.default_split(24, 0, np.ones((RES, RES), np.uint8),
                                   batch_rays=192, min_rays_per_term=64)
    counts = _split_batch(job, {"all": 1, "out": 23, "depth": 23})
    assert counts["all"] == 64
    assert counts["out"] >= 64 and counts["depth"] >= 64
