"""Pinhole cameras: poses, ray bundles, projection and the sampling trajectory.

Conventions: world-from-camera rotation matrices whose columns are the camera
axes (x right, y down, z forward); pixel centers at (col + 0.5, row + 0.5);
depth is Euclidean distance along the unit ray, not z-depth. Geometry is kept
in float64; callers cast rays to float32 before feeding the field.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CameraPose:
    """Intrinsics + extrinsics for one view."""

    position: np.ndarray          # (3,) world
    rotation: np.ndarray          # (3,3) world-from-camera, orthonormal, det +1
    focal: float                  # pixels
    principal_point: tuple        # (cx, cy) pixels
    resolution: tuple             # (w, h) pixels

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(3)
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "principal_point", tuple(float(c) for c in self.principal_point))
        object.__setattr__(self, "resolution", tuple(int(r) for r in self.resolution))
        object.__setattr__(self, "focal", float(self.focal))
        if self.focal <= 0:
            raise ValueError(f"focal must be positive, got {self.focal}")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-6):
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(rot) < 0:
            raise ValueError("rotation must have det +1")

    @property
    def forward(self):
        return self.rotation[:, 2]

    def rays(self):
        """Per-pixel unit rays, row-major. Returns (origins (N,3), dirs (N,3))."""
        w, h = self.resolution
        cx, cy = self.principal_point
        cols, rows = np.meshgrid(np.arange(w), np.arange(h))
        u = (cols + 0.5 - cx) / self.focal
        v = (rows + 0.5 - cy) / self.focal
        d_cam = np.stack([u.ravel(), v.ravel(), np.ones(w * h)], axis=-1)
        d_world = d_cam @ self.rotation.T
        d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
        origins = np.broadcast_to(self.position, d_world.shape).copy()
        return origins, d_world

    def pixel_ray(self, row: int, col: int):
        """Unit ray through the center of pixel (row, col)."""
        cx, cy = self.principal_point
        d_cam = np.array([(col + 0.5 - cx) / self.focal, (row + 0.5 - cy) / self.focal, 1.0])
        d = self.rotation @ d_cam
        return self.position.copy(), d / np.linalg.norm(d)

    def project(self, points):
        """World points (N,3) -> (uv (N,2), distance (N,), in_front (N,) bool).

        uv is in pixel-center coordinates; distance is Euclidean, matching the
        depth convention of rendered and ray-traced depth images.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        local = (pts - self.position) @ self.rotation  # camera frame
        z = local[:, 2]
        in_front = z > 1e-9
        zsafe = np.where(in_front, z, 1.0)
        cx, cy = self.principal_point
        u = self.focal * local[:, 0] / zsafe + cx
        v = self.focal * local[:, 1] / zsafe + cy
        dist = np.linalg.norm(pts - self.position, axis=-1)
        return np.stack([u, v], axis=-1), dist, in_front

    def unproject(self, uv, depth):
        """Pixel coords (N,2) + Euclidean depth (N,) -> world points (N,3)."""
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        depth = np.asarray(depth, dtype=np.float64).reshape(-1)
        cx, cy = self.principal_point
        d_cam = np.stack([(uv[:, 0] - cx) / self.focal,
                          (uv[:, 1] - cy) / self.focal,
                          np.ones(len(uv))], axis=-1)
        d = d_cam @ self.rotation.T
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return self.position + depth[:, None] * d

    def scaled(self, resolution):
        """Same view at a different resolution (focal scales with width)."""
        w, h = self.resolution
        nw, nh = resolution
        s = nw / w
        return CameraPose(self.position, self.rotation, self.focal * s,
                          (self.principal_point[0] * s, self.principal_point[1] * nh / h),
                          (nw, nh))

    def to_dict(self):
        return {
            "position": self.position.tolist(),
            "rotation": self.rotation.reshape(-1).tolist(),  # row-major
            "focal": self.focal,
            "principal_point": list(self.principal_point),
            "resolution": list(self.resolution),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["position"]), np.array(d["rotation"]).reshape(3, 3),
                   d["focal"], tuple(d["principal_point"]), tuple(d["resolution"]))


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-from-camera rotation with camera z pointing at ``target``."""
    position = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - position
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("look_at: position coincides with target")
    fwd = fwd / n
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    rn = np.linalg.norm(right)
    if rn < 1e-9:  # looking straight along up; pick an arbitrary right axis
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
        rn = np.linalg.norm(right)
    right = right / rn
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd], axis=-1)


def make_trajectory(center, radius: float, n_views: int, axis_bias: float = 0.18,
                    sweep: float = 1.2, elevation: float = 0.1,
                    focal: float | None = None, resolution=(64, 64)) -> list[CameraPose]:
    """Forward-facing arc of look-at poses on a sphere of ``radius`` around
    ``center``. Cameras sit on the -y side looking toward +y; ``axis_bias``
    adds a gentle out-of-plane (z) oscillation around the base ``elevation``
    so the arc becomes a shallow spiral. ``sweep`` is the total azimuth range
    in radians.
    """
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    if radius <= 0:
        raise ValueError("radius must be positive")
    center = np.asarray(center, dtype=np.float64)
    w, h = resolution
    if focal is None:
        focal = float(w)
    poses = []
    for k in range(n_views):
        t = 0.5 if n_views == 1 else k / (n_views - 1)
        a = sweep * (t - 0.5)
        e = elevation + axis_bias * np.sin(2.0 * np.pi * t)
        offset = np.array([np.sin(a) * np.cos(e), -np.cos(a) * np.cos(e), np.sin(e)])
        pos = center + radius * offset
        poses.append(CameraPose(pos, look_at(pos, center), focal,
                                (w / 2.0, h / 2.0), (w, h)))
    return poses
