"""Trainer: loss definitions, short end-to-end runs, determinism, divergence."""

import numpy as np
import pytest

from scenescrub import autodiff as ad
from scenescrub.autodiff import mix64
from scenescrub.cameras import make_trajectory
from scenescrub.datasets import PosedImageSet, PosedView
from scenescrub.field import FieldConfig, RadianceField, render_view
from scenescrub.metrics import psnr
from scenescrub.scenes import SceneSpec, Sphere, bundled_scene, default_trajectory, make_pair
from scenescrub.training import (RayStore, TrainConfig, TrainingDiverged,
                                 masked_mse_loss, mse_loss, train)


def small_field(**overrides):
    base = dict(near=2.0, far=6.5, hidden_width=32, hidden_layers=2, skip_at=1,
                pos_levels=4, dir_levels=2, color_width=32, n_coarse=12, n_fine=6,
                pos_scale=0.35)
    base.update(overrides)
    return RadianceField.create(FieldConfig(**base), seed=0)


def constant_scene_dataset(color=(0.4, 0.6, 0.2), n_views=3, resolution=16):
    """A sphere big enough to fill every view, i.e. a constant-ish scene."""
    scene = SceneSpec("const", {"ball": Sphere((0, 0, 0), 1.4, color)},
                      removable_id="ball", ambient=1.0, near=2.0, far=6.5)
    traj = make_trajectory((0, 0, 0), 4.0, n_views, resolution=(resolution, resolution),
                           focal=2.5 * resolution)
    views = []
    for pose in traj:
        from scenescrub.scenes import raytrace_view
        img, dep = raytrace_view(scene, pose)
        views.append(PosedView(pose, img, dep, None))
    return PosedImageSet(views, {"near": scene.near, "far": scene.far})


def _rays_of(ds, view, count):
    o, d = ds[view].pose.rays()
    targets = ds[view].image.reshape(-1, 3)
    return (o[:count], d[:count]), targets[:count]


def test_mse_loss_zero_when_field_matches_targets():
    field = small_field()
    ds = constant_scene_dataset()
    rays, _ = _rays_of(ds, 0, 32)
    # render the field itself and use those renders as targets
    tape = ad.Tape()
    out = field.render_batch(tape, rays[0].astype(np.float32), rays[1].astype(np.float32),
                             ray_seeds=mix64(np.zeros(32, dtype=np.uint64),
                                             np.arange(32, dtype=np.uint64)))
    # mse against (coarse+fine)/nothing is not zero; instead check the
    # degenerate-but-exact case: targets equal to fine AND coarse render is
    # only possible when they agree, so use a field whose two levels share
    # parameters by construction -- here we simply assert the loss formula
    # evaluates to the hand-computed value
    targets = out.color_fine.value
    got = mse_loss(field, rays, targets, seed=0)
    rc = out.color_coarse.value - targets
    want = float(np.sum(rc * rc, dtype=np.float64) / 32)
    assert got == pytest.approx(want, rel=1e-5)


def test_mse_loss_batch_permutation_symmetric():
    field = small_field()
    ds = constant_scene_dataset()
    (o, d), targets = _rays_of(ds, 0, 64)
    # permutation changes only summation order; mean is symmetric
    perm = np.random.default_rng(0).permutation(64)
    a = mse_loss(field, (o, d), targets, seed=0)
    b = mse_loss(field, (o[perm], d[perm]), targets[perm], seed=0)
    assert a == pytest.approx(b, rel=2e-5)


def test_mse_loss_hand_computed_two_rays():
    field = small_field()
    ds = constant_scene_dataset()
    (o, d), _ = _rays_of(ds, 0, 2)
    targets = np.array([[0.1, 0.2, 0.3], [0.9, 0.8, 0.7]], dtype=np.float32)
    seeds = mix64(np.zeros(2, dtype=np.uint64), np.arange(2, dtype=np.uint64))
    tape = ad.Tape()
    out = field.render_batch(tape, o.astype(np.float32), d.astype(np.float32),
                             ray_seeds=seeds)
    want = 0.0
    for r in range(2):
        want += np.sum((out.color_coarse.value[r] - targets[r]) ** 2, dtype=np.float64)
        want += np.sum((out.color_fine.value[r] - targets[r]) ** 2, dtype=np.float64)
    want /= 2
    got = mse_loss(field, (o, d), targets, seed=0)
    assert got == pytest.approx(float(want), rel=1e-5)


def test_masked_mse_all_ones_equals_mse():
    field = small_field()
    ds = constant_scene_dataset()
    (o, d), targets = _rays_of(ds, 0, 32)
    assert masked_mse_loss(field, (o, d), targets, np.ones(32), seed=0) == \
        pytest.approx(mse_loss(field, (o, d), targets, seed=0), rel=1e-6)


def test_masked_mse_all_zeros_is_zero_with_zero_grads():
    field = small_field()
    ds = constant_scene_dataset()
    (o, d), targets = _rays_of(ds, 0, 16)
    assert masked_mse_loss(field, (o, d), targets, np.zeros(16), seed=0) == 0.0

    # gradient check: masked rays contribute nothing
    from scenescrub.training import _batch_color_loss
    tape = ad.Tape()
    pt = field.bind(tape, trainable=True)
    loss, _ = _batch_color_loss(field, tape, pt, o.astype(np.float32),
                                d.astype(np.float32), targets.astype(np.float32),
                                mix64(np.zeros(16, np.uint64), np.arange(16, dtype=np.uint64)),
                                mask_values=np.zeros(16, np.float32), stratified=False)
    ad.backward(loss)
    for k in field.param_names():
        g = pt[k].grad
        assert g is None or np.all(g == 0.0)


def test_masked_mse_half_batch_ratio():
    field = small_field()
    ds = constant_scene_dataset()
    (o, d), targets = _rays_of(ds, 0, 32)
    mask = np.zeros(32)
    mask[:16] = 1.0
    masked = masked_mse_loss(field, (o, d), targets, mask, seed=0)
    kept = mse_loss(field, (o[:16], d[:16]), targets[:16], seed=0)
    # masked mean over 32 rays = mse over the kept 16 times 16/32
    assert masked == pytest.approx(kept * 0.5, rel=2e-3)


def test_masked_mse_rejects_non_binary():
    field = small_field()
    ds = constant_scene_dataset()
    (o, d), targets = _rays_of(ds, 0, 4)
    with pytest.raises(ValueError, match="binary"):
        masked_mse_loss(field, (o, d), targets, np.full(4, 0.5))


def test_gradient_independent_of_masked_targets():
    # finite-difference probe: perturbing a masked ray's target leaves the
    # loss unchanged
    field = small_field()
    ds = constant_scene_dataset()
    (o, d), targets = _rays_of(ds, 0, 8)
    mask = np.ones(8)
    mask[3] = 0.0
    base = masked_mse_loss(field, (o, d), targets, mask, seed=0)
    bumped = targets.copy()
    bumped[3] += 0.37
    assert masked_mse_loss(field, (o, d), bumped, mask, seed=0) == base


def test_train_constant_scene_reaches_30db():
    ds = constant_scene_dataset(resolution=16)
    field = small_field()
    cfg = TrainConfig(steps=500, batch_rays=128, lr=5e-3, lr_final=1e-3, seed=2,
                      log_every=100)
    field, history = train(field, ds, cfg)
    img, _ = render_view(field, ds[0].pose)
    assert psnr(img, ds[0].image) > 30.0
    # loss trend: the last tenth is below the first tenth
    losses = [h["loss"] for h in history]
    k = max(1, len(losses) // 10)
    assert np.mean(losses[-k:]) < np.mean(losses[:k])


def test_train_determinism_and_seed_sensitivity():
    ds = constant_scene_dataset(resolution=8, n_views=2)
    cfg = TrainConfig(steps=40, batch_rays=32, lr=1e-3, seed=5, log_every=10)

    def run(seed):
        field = small_field()
        c = TrainConfig(steps=40, batch_rays=32, lr=1e-3, seed=seed, log_every=10)
        field, history = train(field, ds, c)
        return [h["loss"] for h in history], field

    h1, f1 = run(5)
    h2, f2 = run(5)
    h3, _ = run(6)
    assert h1 == h2
    for k in f1.params:
        assert np.array_equal(f1.params[k], f2.params[k])
    assert h1 != h3


def test_train_divergence_aborts_with_checkpoint(tmp_path):
    ds = constant_scene_dataset(resolution=8, n_views=1)
    field = small_field()
    field.params["fine/sigma/b"][:] = np.nan  # poisoned parameters
    cfg = TrainConfig(steps=10, batch_rays=8, lr=1e-3, seed=0,
                      out_dir=str(tmp_path / "run"))
    with pytest.raises(TrainingDiverged, match="non-finite"):
        train(field, ds, cfg)
    assert (tmp_path / "run" / "diverged_000000.npz").exists()


def test_train_rejects_empty_dataset():
    with pytest.raises(ValueError, match="empty"):
        train(small_field(), PosedImageSet([], {}), TrainConfig(steps=1))


def test_checkpoints_and_resume(tmp_path):
    ds = constant_scene_dataset(resolution=8, n_views=1)
    field = small_field()
    cfg = TrainConfig(steps=6, batch_rays=16, lr=1e-3, seed=3, log_every=2,
                      checkpoint_every=2, out_dir=str(tmp_path))
    train(field, ds, cfg)
    assert (tmp_path / "checkpoint.npz").exists()
    assert (tmp_path / "history.csv").exists()
    resumed = RadianceField.load(tmp_path / "checkpoint.npz")
    for k in field.params:
        assert np.array_equal(resumed.params[k], field.params[k])


def test_sphere_scene_regression_bound():
    # desk-scale regression: a short run on the bundled scene already clears a
    # conservative PSNR floor (the 20k acceptance run clears 24 dB)
    scene = bundled_scene("figurine")
    traj = default_trajectory(scene, n_views=6, resolution=(24, 24))
    orig, _, _ = make_pair(scene, traj)
    field = RadianceField.create(
        FieldConfig(near=scene.near, far=scene.far, hidden_width=32,
                    hidden_layers=2, skip_at=1, pos_levels=6, dir_levels=2,
                    color_width=32, n_coarse=12, n_fine=8, pos_scale=0.35), seed=1)
    cfg = TrainConfig(steps=600, batch_rays=128, lr=2e-3, lr_final=5e-4, seed=2)
    field, _ = train(field, orig, cfg)
    vals = [psnr(render_view(field, traj[v])[0], orig.views[v].image) for v in (0, 3)]
    assert min(vals) > 17.0


def test_ray_store_flattening():
    ds = constant_scene_dataset(resolution=8, n_views=2)
    store = RayStore.from_dataset(ds)
    assert len(store) == 2 * 64
    assert store.colors.shape == (128, 3)
    assert np.all(store.masks == 1.0)
    np.testing.assert_allclose(np.linalg.norm(store.dirs, axis=1), 1.0, atol=1e-5)


def test_lr_schedule_endpoints():
    cfg = TrainConfig(steps=100, lr=1e-3, lr_final=1e-5)
    assert cfg.lr_at(0) == pytest.approx(1e-3)
    assert cfg.lr_at(100) == pytest.approx(1e-5)
    assert cfg.lr_at(50) == pytest.approx(1e-4, rel=1e-6)


def test_config_round_trip(tmp_path):
    cfg = TrainConfig(steps=123, batch_rays=77, lr=3e-4, seed=9)
    cfg.to_file(tmp_path / "cfg.json")
    assert TrainConfig.from_file(tmp_path / "cfg.json") == cfg
