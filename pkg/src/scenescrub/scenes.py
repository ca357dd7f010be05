"""Analytic ray-traced synthetic scenes.

Produces posed RGB-D "original"/"removed" dataset pairs with exact masks for
the object that differs between the two variants. Shading is Lambertian under
a single directional light with an ambient floor; no shadow rays, so the two
variants are pixel-identical wherever the removable object is absent. The
background is black to match the renderer's empty-space convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cameras import CameraPose, make_trajectory
from .datasets import PosedImageSet, PosedView

MISS = np.inf


@dataclass
class Sphere:
    center: tuple
    radius: float
    albedo: tuple

    def intersect(self, origins, dirs):
        c = np.asarray(self.center, dtype=np.float64)
        oc = origins - c
        b = np.einsum("ij,ij->i", oc, dirs)
        disc = b * b - (np.einsum("ij,ij->i", oc, oc) - self.radius ** 2)
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        t = np.where(t0 > 1e-9, t0, t1)
        t = np.where(hit & (t > 1e-9), t, MISS)
        t_safe = np.where(np.isfinite(t), t, 0.0)
        pts = origins + t_safe[:, None] * dirs
        normals = (pts - c) / self.radius
        return t, normals


@dataclass
class Box:
    center: tuple
    half_size: tuple
    albedo: tuple

    def intersect(self, origins, dirs):
        c = np.asarray(self.center, dtype=np.float64)
        h = np.asarray(self.half_size, dtype=np.float64)
        inv = 1.0 / np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)
        t1 = (c - h - origins) * inv
        t2 = (c + h - origins) * inv
        tmin = np.minimum(t1, t2).max(axis=1)
        tmax = np.maximum(t1, t2).min(axis=1)
        hit = (tmax >= np.maximum(tmin, 1e-9))
        t = np.where(tmin > 1e-9, tmin, tmax)
        t = np.where(hit & (t > 1e-9), t, MISS)
        t_safe = np.where(np.isfinite(t), t, 0.0)
        pts = origins + t_safe[:, None] * dirs
        rel = (pts - c) / h
        axis = np.argmax(np.abs(rel), axis=1)
        normals = np.zeros_like(pts)
        normals[np.arange(len(pts)), axis] = np.sign(rel[np.arange(len(pts)), axis])
        return t, normals


@dataclass
class Rect:
    """Axis-aligned finite rectangle; normal along ``axis`` (0=x, 1=y, 2=z)."""

    center: tuple
    axis: int
    half_size: tuple  # extents along the two in-plane axes, in axis order
    albedo: tuple

    def intersect(self, origins, dirs):
        c = np.asarray(self.center, dtype=np.float64)
        a = self.axis
        others = [i for i in range(3) if i != a]
        dn = dirs[:, a]
        dn_safe = np.where(np.abs(dn) < 1e-12, 1e-12, dn)
        t = (c[a] - origins[:, a]) / dn_safe
        pts = origins + t[:, None] * dirs
        inside = ((np.abs(pts[:, others[0]] - c[others[0]]) <= self.half_size[0])
                  & (np.abs(pts[:, others[1]] - c[others[1]]) <= self.half_size[1]))
        t = np.where(inside & (t > 1e-9) & (np.abs(dn) > 1e-12), t, MISS)
        normals = np.zeros_like(pts)
        normals[:, a] = -np.sign(dn)
        return t, normals


@dataclass
class SceneSpec:
    """Primitive list plus the id of the object deleted in the removed variant."""

    name: str
    primitives: dict                 # id -> Sphere | Box | Rect
    removable_id: str | None
    light_dir: tuple = (0.35, -0.45, 0.82)
    ambient: float = 0.35
    background: tuple = (0.0, 0.0, 0.0)
    near: float = 1.4
    far: float = 7.4

    def __post_init__(self):
        if self.removable_id is not None and self.removable_id not in self.primitives:
            raise ValueError(f"removable_id {self.removable_id!r} not among primitives")
        l = np.asarray(self.light_dir, dtype=np.float64)
        self.light_dir = tuple(l / np.linalg.norm(l))

    def without_removable(self):
        if self.removable_id is None:
            raise ValueError("scene has no removable object")
        prims = {k: v for k, v in self.primitives.items() if k != self.removable_id}
        return SceneSpec(self.name, prims, removable_id=None,
                         light_dir=self.light_dir, ambient=self.ambient,
                         background=self.background, near=self.near, far=self.far)


def _trace(scene: SceneSpec, origins, dirs):
    """Closest-hit over all primitives. Returns (t, normals, hit_index)."""
    n = len(origins)
    best_t = np.full(n, MISS)
    best_n = np.zeros((n, 3))
    best_id = np.full(n, -1, dtype=np.int32)
    for idx, (pid, prim) in enumerate(scene.primitives.items()):
        t, normals = prim.intersect(origins, dirs)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_n[closer] = normals[closer]
        best_id = np.where(closer, idx, best_id)
    return best_t, best_n, best_id


def _shade(scene: SceneSpec, normals, hit_id):
    if not scene.primitives:
        return np.zeros((len(hit_id), 3))
    albedos = np.array([p.albedo for p in scene.primitives.values()], dtype=np.float64)
    light = np.asarray(scene.light_dir)
    lam = np.clip(normals @ light, 0.0, None)
    shade = scene.ambient + (1.0 - scene.ambient) * lam
    color = albedos[np.clip(hit_id, 0, None)] * shade[:, None]
    return np.clip(color, 0.0, 1.0)


def raytrace_view(scene: SceneSpec, pose: CameraPose):
    """Exact primary-ray render. Returns (image (h,w,3), depth (h,w)) float32;
    missed pixels get the background color and depth = far sentinel."""
    image, depth, _ = raytrace_view_ids(scene, pose)
    return image, depth


def raytrace_view_ids(scene: SceneSpec, pose: CameraPose):
    """raytrace_view plus the per-pixel primitive index (-1 for miss)."""
    w, h = pose.resolution
    origins, dirs = pose.rays()
    t, normals, hit_id = _trace(scene, origins, dirs)
    hit = hit_id >= 0
    color = _shade(scene, normals, hit_id)
    color[~hit] = scene.background
    depth = np.where(hit, t, scene.far)
    image = color.reshape(h, w, 3).astype(np.float32)
    return image, depth.reshape(h, w).astype(np.float32), hit_id.reshape(h, w)


def make_pair(scene: SceneSpec, trajectory: list[CameraPose]):
    """Render the original and removed variants from identical poses.

    Returns (original, removed, true_masks); true_masks follow the usual
    convention, 0 where the primary hit is the removable object, 1 elsewhere.
    """
    removed_scene = scene.without_removable()
    removable_idx = list(scene.primitives).index(scene.removable_id)
    orig_views, rem_views, true_masks = [], [], []
    for pose in trajectory:
        img_o, dep_o, ids = raytrace_view_ids(scene, pose)
        img_r, dep_r, _ = raytrace_view_ids(removed_scene, pose)
        mask = (ids != removable_idx).astype(np.uint8)
        orig_views.append(PosedView(pose, img_o, dep_o, mask))
        rem_views.append(PosedView(pose, img_r, dep_r, None))
        true_masks.append(mask)
    meta = {"scene": scene.name, "near": scene.near, "far": scene.far,
            "background": list(scene.background)}
    original = PosedImageSet(orig_views, dict(meta, variant="original"))
    removed = PosedImageSet(rem_views, dict(meta, variant="removed"))
    return original, removed, true_masks


# ---------------------------------------------------------------------------
# bundled scenes (all sized so every primitive lies inside [near, far] of the
# default trajectory and the removable object is unoccluded from every view)

_FLOOR = Rect(center=(0.0, 0.0, -0.4), axis=2, half_size=(2.3, 2.3), albedo=(0.62, 0.58, 0.52))


def _figurine() -> SceneSpec:
    prims = {
        "floor": _FLOOR,
        "body": Sphere((0.55, 0.3, 0.05), 0.45, (0.75, 0.25, 0.2)),
        "head": Sphere((0.55, 0.3, 0.62), 0.26, (0.85, 0.55, 0.3)),
        "companion": Box((-0.9, -0.1, -0.1), (0.32, 0.32, 0.3), (0.2, 0.4, 0.7)),
    }
    return SceneSpec("figurine", prims, removable_id="body")


def _desk() -> SceneSpec:
    prims = {
        "floor": _FLOOR,
        "desk_top": Box((0.0, 0.25, -0.25), (1.5, 0.9, 0.12), (0.45, 0.33, 0.22)),
        "crate": Box((0.35, 0.15, 0.3), (0.45, 0.22, 0.4), (0.2, 0.6, 0.3)),
        "mug": Sphere((-0.85, -0.05, 0.08), 0.24, (0.8, 0.75, 0.25)),
    }
    return SceneSpec("desk", prims, removable_id="crate")


def _tv() -> SceneSpec:
    prims = {
        "floor": _FLOOR,
        "stand": Box((0.0, 0.45, -0.25), (0.9, 0.35, 0.14), (0.35, 0.3, 0.28)),
        "panel": Box((0.0, 0.5, 0.5), (0.85, 0.08, 0.55), (0.12, 0.12, 0.16)),
        "orb": Sphere((1.3, -0.2, -0.05), 0.3, (0.7, 0.3, 0.55)),
    }
    return SceneSpec("tv", prims, removable_id="panel")


BUNDLED_SCENES = {"figurine": _figurine, "desk": _desk, "tv": _tv}


def bundled_scene(name: str) -> SceneSpec:
    if name not in BUNDLED_SCENES:
        raise KeyError(f"unknown scene {name!r}; available: {sorted(BUNDLED_SCENES)}")
    return BUNDLED_SCENES[name]()


def default_trajectory(scene: SceneSpec, n_views: int = 24, resolution=(64, 64)) -> list[CameraPose]:
    """The standard 24-view arc used for the bundled scenes; the elevation
    bias keeps every camera above the floor plane."""
    return make_trajectory(center=(0.0, 0.0, 0.25), radius=4.0, n_views=n_views,
                           axis_bias=0.16, sweep=1.1, elevation=0.12,
                           resolution=resolution)
