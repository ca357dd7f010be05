"""Training a radiance field from a posed image set.

The standard loss sums coarse and fine squared color error per ray and
averages over the batch; the masked variant multiplies each ray's residual by
its binary mask value, so masked rays contribute neither loss nor gradient.
Ray batches are drawn with replacement, uniformly across all pixels of all
views. Runs are bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, mix64
from .datasets import PosedImageSet
from .field import RadianceField

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; a diagnostic checkpoint path is attached."""


@dataclass
class TrainConfig:
    steps: int = 20000
    batch_rays: int = 192
    lr: float = 5e-4
    lr_final: float = 5e-5
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 1000
    out_dir: str | None = None

    def __post_init__(self):
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if self.batch_rays <= 0:
            raise ValueError("batch_rays must be positive")

    def to_file(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=1, sort_keys=True))

    @classmethod
    def from_file(cls, path):
        return cls(**json.loads(Path(path).read_text()))

    def lr_at(self, step: int) -> float:
        """Exponential decay from lr to lr_final across the step budget."""
        t = min(step / self.steps, 1.0)
        return float(self.lr * (self.lr_final / self.lr) ** t)


@dataclass
class RayStore:
    """Flattened per-pixel rays, colors and masks for a dataset."""

    origins: np.ndarray   # (N,3) float32
    dirs: np.ndarray      # (N,3) float32
    colors: np.ndarray    # (N,3) float32
    masks: np.ndarray     # (N,) float32 (1.0 where no mask given)

    @classmethod
    def from_dataset(cls, ds: PosedImageSet) -> "RayStore":
        origins, dirs, colors, masks = [], [], [], []
        for v in ds.views:
            o, d = v.pose.rays()
            origins.append(o.astype(np.float32))
            dirs.append(d.astype(np.float32))
            colors.append(v.image.reshape(-1, 3))
            if v.mask is not None:
                masks.append(v.mask.reshape(-1).astype(np.float32))
            else:
                masks.append(np.ones(len(o), dtype=np.float32))
        return cls(np.concatenate(origins), np.concatenate(dirs),
                   np.concatenate(colors), np.concatenate(masks))

    def __len__(self):
        return len(self.origins)


def _batch_color_loss(field, tape, params_t, origins, dirs, targets, ray_seeds,
                      mask_values=None, stratified=True):
    """Coarse+fine squared color error, averaged over the batch. Returns the
    loss tensor plus the render (for callers that also want depth)."""
    out = field.render_batch(tape, origins, dirs, params_t=params_t,
                             stratified=stratified, ray_seeds=ray_seeds)
    target_t = tape.constant(targets)
    rc = ad.sub(out.color_coarse, target_t)
    rf = ad.sub(out.color_fine, target_t)
    if mask_values is not None:
        m = tape.constant(mask_values.reshape(-1, 1))
        rc = ad.mul(rc, m)
        rf = ad.mul(rf, m)
    loss = ad.scale(ad.add(ad.sum_(ad.mul(rc, rc)), ad.sum_(ad.mul(rf, rf))),
                    1.0 / len(origins))
    return loss, out


def mse_loss(field: RadianceField, rays, targets, *, stratified=False, seed=0):
    """Batch color loss against targets. ``rays`` is (origins, dirs)."""
    origins, dirs = rays
    if len(origins) == 0:
        raise ValueError("mse_loss: empty ray batch")
    tape = ad.Tape()
    pt = field.bind(tape)
    seeds = mix64(np.full(len(origins), seed, dtype=np.uint64),
                  np.arange(len(origins), dtype=np.uint64))
    loss, _ = _batch_color_loss(field, tape, pt, np.asarray(origins, np.float32),
                                np.asarray(dirs, np.float32),
                                np.asarray(targets, np.float32), seeds,
                                stratified=stratified)
    return float(loss.value)


def masked_mse_loss(field: RadianceField, rays, targets, mask_values, *,
                    stratified=False, seed=0):
    """Batch color loss with per-ray binary masking (0 = excluded)."""
    origins, dirs = rays
    if len(origins) == 0:
        raise ValueError("masked_mse_loss: empty ray batch")
    mask_values = np.asarray(mask_values, np.float32)
    if not np.isin(mask_values, (0.0, 1.0)).all():
        raise ValueError("mask_values must be binary")
    tape = ad.Tape()
    pt = field.bind(tape)
    seeds = mix64(np.full(len(origins), seed, dtype=np.uint64),
                  np.arange(len(origins), dtype=np.uint64))
    loss, _ = _batch_color_loss(field, tape, pt, np.asarray(origins, np.float32),
                                np.asarray(dirs, np.float32),
                                np.asarray(targets, np.float32), seeds,
                                mask_values=mask_values, stratified=stratified)
    return float(loss.value)


def save_history_csv(history, path):
    if not history:
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(history[0].keys()))
        writer.writeheader()
        writer.writerows(history)


def train(field: RadianceField, dataset: PosedImageSet, cfg: TrainConfig,
          loss: str = "mse", start_step: int = 0, adam_state: AdamState | None = None):
    """Optimize ``field`` in place on random ray batches. Returns
    (field, history): history rows are dicts logged every ``log_every`` steps.

    ``loss`` is "mse" or "masked_mse" (requires per-view masks). Resume by
    passing ``start_step`` and the previous Adam state.
    """
    if loss not in ("mse", "masked_mse"):
        raise ValueError(f"unknown loss {loss!r}")
    if len(dataset.views) == 0:
        raise ValueError("empty dataset")
    store = RayStore.from_dataset(dataset)
    use_mask = loss == "masked_mse"

    names = field.param_names()
    adam = adam_state or AdamState()
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    history = []
    rng = np.random.default_rng(cfg.seed)
    n_rays = len(store)
    for step in range(start_step, cfg.steps):
        idx = rng.integers(0, n_rays, size=cfg.batch_rays)
        seeds = mix64(np.full(cfg.batch_rays, mix64(cfg.seed, step), dtype=np.uint64),
                      idx.astype(np.uint64))
        tape = ad.Tape()
        pt = field.bind(tape, trainable=True)
        loss_t, _ = _batch_color_loss(
            field, tape, pt, store.origins[idx], store.dirs[idx], store.colors[idx],
            seeds, mask_values=store.masks[idx] if use_mask else None)
        loss_val = float(loss_t.value)
        if not np.isfinite(loss_val):
            diag = None
            if out_dir:
                diag = out_dir / f"diverged_{step:06d}.npz"
                field.save(diag)
            raise TrainingDiverged(f"non-finite loss at step {step}"
                                   + (f" (checkpoint: {diag})" if diag else ""))
        ad.backward(loss_t)
        grads = ad.collect_grads([pt[k] for k in names])
        ad.adam_step([field.params[k] for k in names], grads, adam, cfg.lr_at(step))

        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            history.append({"step": step, "loss": loss_val, "lr": cfg.lr_at(step)})
        if out_dir and ((step + 1) % cfg.checkpoint_every == 0 or step == cfg.steps - 1):
            field.save(out_dir / "checkpoint.npz")
            save_history_csv(history, out_dir / "history.csv")

    if out_dir:
        field.save(out_dir / "checkpoint.npz")
        save_history_csv(history, out_dir / "history.csv")
    return field, history
