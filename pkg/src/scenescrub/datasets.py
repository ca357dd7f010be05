"""Posed image sets and their on-disk layout.

Layout (version 1)::

    <root>/
      meta.json             poses (row-major rotations), intrinsics, near/far,
                            variant, depth encoding, file names
      images/view_000.png   RGB, 8-bit lossless
      depth/view_000.npy    float32, Euclidean ray distance, misses = far
      masks/view_000.png    1-bit, 0 inside the marked region, 1 outside

Every view shares one resolution. Masks follow the 0-inside / 1-outside
convention everywhere in this package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .cameras import CameraPose

LAYOUT_VERSION = 1


@dataclass
class PosedView:
    pose: CameraPose
    image: np.ndarray                 # (h,w,3) float32 in [0,1]
    depth: np.ndarray | None = None   # (h,w) float32
    mask: np.ndarray | None = None    # (h,w) uint8 in {0,1}


@dataclass
class PosedImageSet:
    views: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = {v.image.shape for v in self.views}
        if len(shapes) > 1:
            raise ValueError(f"views have mixed image shapes: {shapes}")
        for v in self.views:
            if v.mask is not None and v.mask.shape != v.image.shape[:2]:
                raise ValueError("mask resolution differs from image")
            if v.depth is not None and v.depth.shape != v.image.shape[:2]:
                raise ValueError("depth resolution differs from image")

    def __len__(self):
        return len(self.views)

    def __getitem__(self, i) -> PosedView:
        return self.views[i]

    @property
    def resolution(self):
        h, w = self.views[0].image.shape[:2]
        return (w, h)

    @property
    def poses(self):
        return [v.pose for v in self.views]


def save_image_png(path, image):
    """float [0,1] (h,w,3) -> 8-bit PNG."""
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def load_image_png(path):
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0


def save_mask_png(path, mask):
    """uint8 {0,1} -> 1-bit PNG."""
    Image.fromarray(np.asarray(mask).astype(bool)).save(path, format="PNG")


def load_mask_png(path):
    return np.asarray(Image.open(path).convert("1"), dtype=np.uint8)


def save_dataset(ds: PosedImageSet, root) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    if any(v.depth is not None for v in ds.views):
        (root / "depth").mkdir(exist_ok=True)
    if any(v.mask is not None for v in ds.views):
        (root / "masks").mkdir(exist_ok=True)

    entries = []
    for i, v in enumerate(ds.views):
        name = f"view_{i:03d}"
        entry = {"image": f"images/{name}.png", "pose": v.pose.to_dict()}
        save_image_png(root / entry["image"], v.image)
        if v.depth is not None:
            entry["depth"] = f"depth/{name}.npy"
            np.save(root / entry["depth"], v.depth.astype(np.float32))
        if v.mask is not None:
            entry["mask"] = f"masks/{name}.png"
            save_mask_png(root / entry["mask"], v.mask)
        entries.append(entry)

    meta = {
        "format_version": LAYOUT_VERSION,
        "depth_encoding": {"type": "npy_float32", "unit": "scene", "miss": "far"},
        **ds.meta,
        "views": entries,
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return root


def load_dataset(root) -> PosedImageSet:
    root = Path(root)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no dataset at {root} (missing {meta_path})")
    meta = json.loads(meta_path.read_text())
    version = meta.get("format_version")
    if version != LAYOUT_VERSION:
        raise ValueError(f"unsupported dataset layout version {version}")
    views = []
    for entry in meta["views"]:
        pose = CameraPose.from_dict(entry["pose"])
        image = load_image_png(root / entry["image"])
        depth = np.load(root / entry["depth"]) if "depth" in entry else None
        mask = load_mask_png(root / entry["mask"]) if "mask" in entry else None
        views.append(PosedView(pose, image, depth, mask))
    extras = {k: v for k, v in meta.items()
              if k not in ("views", "format_version", "depth_encoding")}
    return PosedImageSet(views, extras)
