"""Scene oracle: cameras, trajectory, ray tracing, dataset pairs and layout."""

import hashlib

import numpy as np
import pytest

from scenescrub.cameras import CameraPose, look_at, make_trajectory
from scenescrub.datasets import PosedImageSet, load_dataset, save_dataset
from scenescrub.scenes import (BUNDLED_SCENES, Box, Rect, SceneSpec, Sphere,
                               bundled_scene, default_trajectory, make_pair,
                               raytrace_view, raytrace_view_ids)


def _single_sphere_scene(radius=1.0, distance=4.0):
    prims = {
        "ball": Sphere((0.0, distance, 0.0), radius, (0.8, 0.2, 0.2)),
        "other": Sphere((3.0, distance, 3.0), 0.5, (0.2, 0.8, 0.2)),
    }
    return SceneSpec("probe", prims, removable_id="ball", near=1.0, far=8.0)


def _front_pose(resolution=(65, 65), focal=80.0):
    return CameraPose(position=(0.0, 0.0, 0.0), rotation=look_at((0, 0, 0), (0, 1, 0)),
                      focal=focal, principal_point=(resolution[0] / 2, resolution[1] / 2),
                      resolution=resolution)


# --- trajectory ---------------------------------------------------------------


def test_single_view_trajectory_is_at_radius():
    center = np.array([0.5, -0.25, 1.0])
    poses = make_trajectory(center, radius=3.0, n_views=1)
    assert len(poses) == 1
    assert np.linalg.norm(poses[0].position - center) == pytest.approx(3.0)


def test_trajectory_has_24_views_and_look_at_holds():
    center = np.zeros(3)
    poses = make_trajectory(center, radius=4.0, n_views=24)
    assert len(poses) == 24
    for pose in poses:
        to_center = center - pose.position
        to_center /= np.linalg.norm(to_center)
        angle = np.arccos(np.clip(np.dot(pose.forward, to_center), -1, 1))
        assert angle < 1e-6
        # orthonormal, right-handed
        assert np.allclose(pose.rotation.T @ pose.rotation, np.eye(3), atol=1e-9)
        assert np.linalg.det(pose.rotation) == pytest.approx(1.0)
        # scene faces +y: cameras sit on the -y side looking forward
        assert pose.position[1] < 0
        assert pose.forward[1] > 0


def test_trajectory_argument_validation():
    with pytest.raises(ValueError):
        make_trajectory((0, 0, 0), radius=1.0, n_views=0)
    with pytest.raises(ValueError):
        make_trajectory((0, 0, 0), radius=-1.0, n_views=5)


# --- projection round trips ----------------------------------------------------


def test_project_unproject_round_trip():
    poses = make_trajectory((0, 0, 0.1), radius=4.0, n_views=6, resolution=(64, 48))
    rng = np.random.default_rng(3)
    for pose in poses:
        uv = np.stack([rng.uniform(0, 64, size=50), rng.uniform(0, 48, size=50)], axis=-1)
        depth = rng.uniform(1.0, 6.0, size=50)
        pts = pose.unproject(uv, depth)
        uv2, dist, in_front = pose.project(pts)
        assert in_front.all()
        np.testing.assert_allclose(uv2, uv, atol=1e-4)
        np.testing.assert_allclose(dist, depth, rtol=1e-9)


def test_rays_match_pixel_ray():
    pose = _front_pose()
    origins, dirs = pose.rays()
    w, h = pose.resolution
    for row, col in [(0, 0), (13, 40), (64, 64)]:
        o, d = pose.pixel_ray(row, col)
        np.testing.assert_allclose(dirs[row * w + col], d, atol=1e-12)
        np.testing.assert_allclose(origins[row * w + col], o, atol=1e-12)
        assert np.linalg.norm(d) == pytest.approx(1.0, abs=1e-9)


# --- ray tracing ---------------------------------------------------------------


def test_empty_scene_renders_background_and_far():
    scene = SceneSpec("empty", {"x": Sphere((0, 100, 0), 0.1, (1, 1, 1))},
                      removable_id="x", near=1.0, far=8.0, background=(0.1, 0.2, 0.3))
    scene.primitives.clear()
    scene.removable_id = None
    pose = _front_pose()
    image, depth = raytrace_view(scene, pose)
    np.testing.assert_allclose(image, np.broadcast_to((0.1, 0.2, 0.3), image.shape),
                               atol=1e-6)
    np.testing.assert_array_equal(depth, np.full_like(depth, 8.0))


def test_center_pixel_depth_is_exact():
    # unit sphere on the optical axis at distance 4 -> center depth exactly 3
    scene = _single_sphere_scene(radius=1.0, distance=4.0)
    pose = _front_pose(resolution=(65, 65), focal=100.0)  # odd res: center pixel on axis
    image, depth = raytrace_view(scene, pose)
    assert depth[32, 32] == pytest.approx(3.0, abs=1e-12)


def test_sphere_intersection_matches_quadratic_oracle():
    rng = np.random.default_rng(11)
    center = np.array([0.3, 4.0, -0.2])
    radius = 0.9
    sph = Sphere(tuple(center), radius, (1, 1, 1))
    origins = rng.uniform(-1, 1, size=(100, 3))
    dirs = rng.normal(size=(100, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t, normals = sph.intersect(origins, dirs)

    # closed-form quadratic roots
    oc = origins - center
    a = 1.0
    b = 2 * np.einsum("ij,ij->i", oc, dirs)
    c = np.einsum("ij,ij->i", oc, oc) - radius ** 2
    disc = b * b - 4 * a * c
    for i in range(100):
        if disc[i] < 0:
            assert np.isinf(t[i])
            continue
        r1 = (-b[i] - np.sqrt(disc[i])) / 2
        r2 = (-b[i] + np.sqrt(disc[i])) / 2
        expect = r1 if r1 > 1e-9 else (r2 if r2 > 1e-9 else np.inf)
        if np.isinf(expect):
            assert np.isinf(t[i])
        else:
            assert t[i] == pytest.approx(expect, abs=1e-9)


def test_box_and_rect_intersection_basics():
    box = Box((0, 4, 0), (1, 1, 1), (1, 1, 1))
    t, n = box.intersect(np.array([[0.0, 0.0, 0.0]]), np.array([[0.0, 1.0, 0.0]]))
    assert t[0] == pytest.approx(3.0)
    np.testing.assert_allclose(n[0], [0, -1, 0], atol=1e-12)

    rect = Rect((0, 4, 0), axis=1, half_size=(2, 2), albedo=(1, 1, 1))
    t, n = rect.intersect(np.array([[0.5, 0.0, 0.5]]), np.array([[0.0, 1.0, 0.0]]))
    assert t[0] == pytest.approx(4.0)
    t_miss, _ = rect.intersect(np.array([[5.0, 0.0, 0.0]]), np.array([[0.0, 1.0, 0.0]]))
    assert np.isinf(t_miss[0])


# --- dataset pairs --------------------------------------------------------------


def test_make_pair_identity_outside_mask():
    scene = bundled_scene("figurine")
    traj = default_trajectory(scene, n_views=4)
    original, removed, true_masks = make_pair(scene, traj)
    for vo, vr, m in zip(original.views, removed.views, true_masks):
        outside = m == 1
        np.testing.assert_array_equal(vo.image[outside], vr.image[outside])
        np.testing.assert_array_equal(vo.depth[outside], vr.depth[outside])
        assert (m == 0).any()  # object visible from every default view
        assert set(np.unique(m)) <= {0, 1}


def test_make_pair_occluded_object_gives_all_ones_mask():
    # removable sphere fully hidden behind a big box from the camera side
    prims = {
        "wall": Box((0, 3.0, 0), (2.0, 0.2, 2.0), (0.5, 0.5, 0.5)),
        "hidden": Sphere((0, 5.0, 0), 0.5, (1, 0, 0)),
    }
    scene = SceneSpec("occluded", prims, removable_id="hidden", near=1.0, far=9.0)
    pose = _front_pose()
    _, _, ids = raytrace_view_ids(scene, pose)
    mask = (ids != list(scene.primitives).index("hidden")).astype(np.uint8)
    assert (mask == 1).all()


def test_depth_consistency_across_views():
    # a floor point seen from A, reprojected into B, must land within 1 px of
    # where B sees that same surface point (checked as a cycle reprojection)
    scene = bundled_scene("desk")
    traj = default_trajectory(scene, n_views=6)
    a, b = traj[1], traj[4]
    _, dep_a, ids_a = raytrace_view_ids(scene, a)
    _, dep_b, ids_b = raytrace_view_ids(scene, b)
    floor_idx = list(scene.primitives).index("floor")
    rows, cols = np.nonzero(ids_a == floor_idx)
    take = slice(0, len(rows), 7)
    uv_a = np.stack([cols[take] + 0.5, rows[take] + 0.5], axis=-1)
    pts = a.unproject(uv_a, dep_a[rows[take], cols[take]])
    uv_b, _, in_front = b.project(pts)
    w, h = b.resolution
    ok = in_front & (uv_b[:, 0] >= 0) & (uv_b[:, 0] < w) & (uv_b[:, 1] >= 0) & (uv_b[:, 1] < h)
    bc = np.floor(uv_b[ok, 0]).astype(int)
    br = np.floor(uv_b[ok, 1]).astype(int)
    same_floor = ids_b[br, bc] == floor_idx
    # B's own hit at the landing position (bilinear depth), taken back into A
    uv_hit = uv_b[ok][same_floor]
    x0 = np.clip(np.floor(uv_hit[:, 0] - 0.5).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(uv_hit[:, 1] - 0.5).astype(int), 0, h - 2)
    fx = np.clip(uv_hit[:, 0] - 0.5 - x0, 0, 1)
    fy = np.clip(uv_hit[:, 1] - 0.5 - y0, 0, 1)
    d_bil = (dep_b[y0, x0] * (1 - fx) * (1 - fy) + dep_b[y0, x0 + 1] * fx * (1 - fy)
             + dep_b[y0 + 1, x0] * (1 - fx) * fy + dep_b[y0 + 1, x0 + 1] * fx * fy)
    pts_b = b.unproject(uv_hit, d_bil)
    uv_back, _, _ = a.project(pts_b)
    err_px = np.linalg.norm(uv_back - uv_a[ok][same_floor], axis=1)
    assert same_floor.mean() > 0.8
    assert np.quantile(err_px, 0.95) <= 1.0


def test_three_bundled_scenes_exist_with_removable_objects():
    assert set(BUNDLED_SCENES) == {"figurine", "desk", "tv"}
    for name in BUNDLED_SCENES:
        scene = bundled_scene(name)
        assert scene.removable_id in scene.primitives
        traj = default_trajectory(scene, n_views=24)
        assert len(traj) == 24


def test_bundled_scene_primitives_inside_near_far():
    for name in BUNDLED_SCENES:
        scene = bundled_scene(name)
        for pose in default_trajectory(scene, n_views=24):
            _, depth, ids = raytrace_view_ids(scene, pose)
            hit = ids >= 0
            assert depth[hit].min() > scene.near
            assert depth[hit].max() < scene.far


def test_pair_determinism_bit_identical():
    def digest():
        scene = bundled_scene("tv")
        traj = default_trajectory(scene, n_views=3)
        original, removed, masks = make_pair(scene, traj)
        h = hashlib.sha256()
        for v in original.views + removed.views:
            h.update(v.image.tobytes())
            h.update(v.depth.tobytes())
        for m in masks:
            h.update(m.tobytes())
        return h.hexdigest()
    assert digest() == digest()


# --- on-disk layout -------------------------------------------------------------


def test_dataset_round_trip(tmp_path):
    scene = bundled_scene("figurine")
    traj = default_trajectory(scene, n_views=3)
    original, _, _ = make_pair(scene, traj)
    save_dataset(original, tmp_path / "ds")
    loaded = load_dataset(tmp_path / "ds")
    assert len(loaded) == 3
    assert loaded.meta["variant"] == "original"
    assert loaded.meta["near"] == scene.near
    for vo, vl in zip(original.views, loaded.views):
        # images go through 8-bit quantization; depth and masks are lossless
        assert np.abs(vo.image - vl.image).max() <= (0.5 / 255) + 1e-6
        np.testing.assert_array_equal(vo.depth, vl.depth)
        np.testing.assert_array_equal(vo.mask, vl.mask)
        np.testing.assert_allclose(vo.pose.position, vl.pose.position)
        np.testing.assert_allclose(vo.pose.rotation, vl.pose.rotation)


def test_dataset_save_is_deterministic(tmp_path):
    scene = bundled_scene("desk")
    traj = default_trajectory(scene, n_views=2)
    original, _, _ = make_pair(scene, traj)

    def digest(d):
        save_dataset(original, d)
        h = hashlib.sha256()
        for p in sorted(d.rglob("*")):
            if p.is_file():
                h.update(p.name.encode())
                h.update(p.read_bytes())
        return h.hexdigest()

    assert digest(tmp_path / "a") == digest(tmp_path / "b")


def test_load_missing_dataset_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope")


def test_mixed_resolution_rejected():
    scene = bundled_scene("figurine")
    t1 = default_trajectory(scene, n_views=1, resolution=(32, 32))
    t2 = default_trajectory(scene, n_views=1, resolution=(16, 16))
    v1 = make_pair(scene, t1)[0].views[0]
    v2 = make_pair(scene, t2)[0].views[0]
    with pytest.raises(ValueError, match="mixed"):
        PosedImageSet([v1, v2], {})
