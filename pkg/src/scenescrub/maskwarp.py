"""Geometric mask propagation between views.

The user's mask (0 marks the unwanted object) is lifted into 3D with the
user view's rendered depth, reprojected into each target view, and kept only
where the target view's depth agrees, i.e. where the marked surface is
actually visible. Splatting, morphological closing and a safety dilation turn
the scattered reprojections into a dense, slightly conservative mask.
Over-masking is cheap (the inpainter fills extra pixels); under-masking
leaves object remnants, hence the dilation default.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .cameras import CameraPose


def _disk(radius: int):
    if radius <= 0:
        return np.ones((1, 1), dtype=bool)
    y, x = np.ogrid[-radius:radius + 1, -radius:radius + 1]
    return x * x + y * y <= radius * radius


def transfer_mask(user_mask, user_pose: CameraPose, user_depth,
                  target_pose: CameraPose, target_depth, *,
                  rel_tol: float = 0.02, abs_tol: float = 0.01,
                  splat_radius: int = 1, closing_radius: int = 1,
                  dilate_margin: int = 3):
    """Transfer a 0-inside/1-outside mask between views via depth agreement.

    Returns (mask, degenerate): the transferred mask at the target view's
    resolution, and a flag set when every unprojected point fell behind the
    target camera (the result is then all ones).
    """
    user_mask = np.asarray(user_mask)
    th, tw = np.asarray(target_depth).shape
    rows, cols = np.nonzero(user_mask == 0)
    if len(rows) == 0:
        return np.ones((th, tw), dtype=np.uint8), False

    uv = np.stack([cols + 0.5, rows + 0.5], axis=-1)
    depths = np.asarray(user_depth)[rows, cols]
    points = user_pose.unproject(uv, depths)
    tuv, tdist, in_front = target_pose.project(points)

    if not in_front.any():
        return np.ones((th, tw), dtype=np.uint8), True

    tc = np.floor(tuv[:, 0]).astype(np.int64)
    tr = np.floor(tuv[:, 1]).astype(np.int64)
    valid = in_front & (tc >= 0) & (tc < tw) & (tr >= 0) & (tr < th)
    tc, tr, tdist = tc[valid], tr[valid], tdist[valid]
    td = np.asarray(target_depth)[tr, tc]
    agree = np.abs(tdist - td) <= rel_tol * np.abs(td) + abs_tol

    inside = np.zeros((th, tw), dtype=bool)
    inside[tr[agree], tc[agree]] = True
    if splat_radius > 0:
        inside = ndimage.binary_dilation(inside, structure=_disk(splat_radius))
    if closing_radius > 0:
        inside = ndimage.binary_closing(inside, structure=_disk(closing_radius))
    if dilate_margin > 0:
        inside = ndimage.binary_dilation(inside, structure=_disk(dilate_margin))
    return (~inside).astype(np.uint8), False


def mask_iou(a, b) -> float:
    """Intersection over union of the 0-regions; 1.0 when both are empty."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"mask_iou: shapes differ, {a.shape} vs {b.shape}")
    ia = a == 0
    ib = b == 0
    union = np.logical_or(ia, ib).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(ia, ib).sum() / union)
