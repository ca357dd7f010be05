"""Object removal by optimizing the trained field against guiding materials.

The objective combines a color term split over two view sets -- O_all views
are supervised over the whole image (this is what paints new content inside
the mask) and O_out views only outside their masks (this preserves the rest
of the scene without trusting per-view fills that differ view to view) -- and
a depth term that pulls rendered depth toward the completed guiding depth, so
the unwanted geometry actually disappears instead of being repainted.

The default split supervises the full image only at the user-chosen view and
everything else outside the mask; using many fully-supervised views is what
the view-count sweep in ``view_count_grid`` probes (more full-image guidance
views means more cross-view disagreement to average away).

baseline1 fits every guiding image everywhere with no depth term (per-view
color updating); baseline2 retrains a fresh field from scratch with the
masked color loss only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, mix64
from .datasets import PosedImageSet
from .field import RadianceField, render_view
from .metrics import psnr, masked_depth_error
from .training import TrainConfig, train, save_history_csv

log = logging.getLogger(__name__)

MODES = ("ours", "baseline1", "baseline2", "color_only", "depth_only")


@dataclass
class InpaintJob:
    """Configuration of one removal optimization."""

    user_view_index: int
    user_mask: np.ndarray
    all_views: tuple            # full-image color supervision
    out_views: tuple            # outside-mask color supervision
    depth_views: tuple          # depth supervision (guiding depth targets)
    depth_weight: float = 1.0
    steps: int = 5000
    batch_rays: int = 192
    lr: float = 1e-4
    seed: int = 0
    mode: str = "ours"
    min_rays_per_term: int = 64
    masked_depth: bool = False  # restrict the depth term to outside-mask rays

    def __post_init__(self):
        self.all_views = tuple(self.all_views)
        self.out_views = tuple(self.out_views)
        self.depth_views = tuple(self.depth_views)
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        overlap = set(self.all_views) & set(self.out_views)
        if overlap:
            raise ValueError(f"views supervised twice: {sorted(overlap)}")

    @classmethod
    def default_split(cls, n_views: int, user_view_index: int, user_mask, **kwargs):
        """The standard configuration: full-image color at the user view only,
        outside-mask color and depth at every sampled view."""
        sampled = tuple(i for i in range(n_views) if i != user_view_index)
        return cls(user_view_index, np.asarray(user_mask, dtype=np.uint8),
                   all_views=(user_view_index,), out_views=sampled,
                   depth_views=sampled, **kwargs)


@dataclass
class _RayPool:
    origins: np.ndarray
    dirs: np.ndarray
    colors: np.ndarray
    depths: np.ndarray
    masks: np.ndarray
    ray_ids: np.ndarray  # global (view * pixels + pixel) ids for seeding

    @classmethod
    def from_views(cls, guidance: PosedImageSet, views):
        o, d, c, z, m, ids = [], [], [], [], [], []
        for v in views:
            view = guidance[v]
            oo, dd = view.pose.rays()
            n = len(oo)
            o.append(oo.astype(np.float32))
            d.append(dd.astype(np.float32))
            c.append(view.image.reshape(-1, 3))
            z.append(view.depth.reshape(-1).astype(np.float32))
            m.append(view.mask.reshape(-1).astype(np.float32))
            ids.append(v * n + np.arange(n, dtype=np.uint64))
        if not o:
            return None
        return cls(np.concatenate(o), np.concatenate(d), np.concatenate(c),
                   np.concatenate(z), np.concatenate(m), np.concatenate(ids))

    def __len__(self):
        return len(self.origins)


def _split_batch(job: InpaintJob, sizes: dict) -> dict:
    """Proportional ray split across active terms with a per-term floor."""
    total_views = sum(sizes.values())
    counts = {}
    for term, n_views in sizes.items():
        if n_views == 0:
            continue
        n = round(job.batch_rays * n_views / total_views)
        counts[term] = max(job.min_rays_per_term, n)
    return counts


def _term_rays(pool: _RayPool, rng, n, step_seed):
    idx = rng.integers(0, len(pool), size=n)
    seeds = mix64(np.full(n, step_seed, dtype=np.uint64), pool.ray_ids[idx])
    return idx, seeds


def _color_term(field, tape, pt, pool, idx, seeds, masked: bool):
    out = field.render_batch(tape, pool.origins[idx], pool.dirs[idx],
                             params_t=pt, stratified=True, ray_seeds=seeds)
    target = tape.constant(pool.colors[idx])
    rc = ad.sub(out.color_coarse, target)
    rf = ad.sub(out.color_fine, target)
    if masked:
        m = tape.constant(pool.masks[idx].reshape(-1, 1))
        rc = ad.mul(rc, m)
        rf = ad.mul(rf, m)
    return ad.scale(ad.add(ad.sum_(ad.mul(rc, rc)), ad.sum_(ad.mul(rf, rf))),
                    1.0 / len(idx))


def _depth_term(field, tape, pt, pool, idx, seeds, depth_scale, masked: bool):
    out = field.render_batch(tape, pool.origins[idx], pool.dirs[idx],
                             params_t=pt, stratified=True, ray_seeds=seeds)
    target = tape.constant(pool.depths[idx] * depth_scale)
    rc = ad.sub(ad.scale(out.depth_coarse, depth_scale), target)
    rf = ad.sub(ad.scale(out.depth_fine, depth_scale), target)
    if masked:
        m = tape.constant(pool.masks[idx])
        rc = ad.mul(rc, m)
        rf = ad.mul(rf, m)
    return ad.scale(ad.add(ad.sum_(ad.mul(rc, rc)), ad.sum_(ad.mul(rf, rf))),
                    1.0 / len(idx))


def color_loss_all(field: RadianceField, guidance: PosedImageSet, views, ray_batch):
    """Full-image color loss over the given views for a fixed ray draw.

    ray_batch: (pixel_indices, ray_seeds) into the pooled pixels of ``views``.
    Returns the loss as a float.
    """
    pool = _RayPool.from_views(guidance, views)
    idx, seeds = ray_batch
    tape = ad.Tape()
    pt = field.bind(tape)
    return float(_color_term(field, tape, pt, pool, idx, seeds, masked=False).value)


def color_loss_out(field: RadianceField, guidance: PosedImageSet, views, ray_batch):
    """Outside-mask color loss (masked rays contribute nothing)."""
    pool = _RayPool.from_views(guidance, views)
    idx, seeds = ray_batch
    tape = ad.Tape()
    pt = field.bind(tape)
    return float(_color_term(field, tape, pt, pool, idx, seeds, masked=True).value)


def depth_loss(field: RadianceField, guidance: PosedImageSet, views, ray_batch,
               masked: bool = False):
    """Coarse+fine squared depth error against guiding depth, depth values
    normalized by the near/far span so the term shares scale with color."""
    pool = _RayPool.from_views(guidance, views)
    idx, seeds = ray_batch
    cfg = field.config
    tape = ad.Tape()
    pt = field.bind(tape)
    return float(_depth_term(field, tape, pt, pool, idx, seeds,
                             1.0 / (cfg.far - cfg.near), masked=masked).value)


def inpaint(field: RadianceField, guidance: PosedImageSet, job: InpaintJob, *,
            out_dir=None, progress=None):
    """Optimize a copy of the pre-trained field per the job's loss split.

    Returns (updated_field, history); history rows carry every loss component
    and their sum per step. The input field is left untouched (warm start
    semantics: at step 0 the copy renders identically to it). ``progress`` is
    called with the step index every 100 steps.
    """
    if job.mode == "baseline2":
        raise ValueError("baseline2 retrains from scratch; use the baseline2() entry point")
    use_color = job.mode in ("ours", "baseline1", "color_only")
    use_depth = job.mode in ("ours", "depth_only") and job.depth_weight != 0.0

    field = field.copy()
    cfg = field.config
    depth_scale = 1.0 / (cfg.far - cfg.near)

    pool_all = _RayPool.from_views(guidance, job.all_views) if use_color else None
    pool_out = _RayPool.from_views(guidance, job.out_views) if use_color else None
    pool_depth = _RayPool.from_views(guidance, job.depth_views) if use_depth else None

    sizes = {}
    if pool_all is not None and len(job.all_views):
        sizes["all"] = len(job.all_views)
    if pool_out is not None and len(job.out_views):
        sizes["out"] = len(job.out_views)
    if pool_depth is not None and len(job.depth_views):
        sizes["depth"] = len(job.depth_views)
    if not sizes:
        raise ValueError(f"mode {job.mode!r} leaves no active loss term")
    counts = _split_batch(job, sizes)

    names = field.param_names()
    adam = AdamState()
    history = []
    rng = np.random.default_rng([job.seed, 0xC0FFEE])
    pools = {"all": pool_all, "out": pool_out, "depth": pool_depth}
    terms = [t for t in ("all", "out", "depth") if t in counts]
    for step in range(job.steps):
        step_seed = mix64(job.seed, step)
        # one fused render over the concatenated per-term ray draws
        draws, offsets, off = {}, {}, 0
        for t in terms:
            draws[t] = _term_rays(pools[t], rng, counts[t], step_seed)
            offsets[t] = (off, off + counts[t])
            off += counts[t]
        origins = np.concatenate([pools[t].origins[draws[t][0]] for t in terms])
        dirs = np.concatenate([pools[t].dirs[draws[t][0]] for t in terms])
        seeds = np.concatenate([draws[t][1] for t in terms])

        tape = ad.Tape()
        pt = field.bind(tape, trainable=True)
        out = field.render_batch(tape, origins, dirs, params_t=pt,
                                 stratified=True, ray_seeds=seeds)
        components = {"color_all": 0.0, "color_out": 0.0, "depth": 0.0}
        total = None

        def _segment(tensor, term):
            lo, hi = offsets[term]
            return ad.slice_(tensor, slice(lo, hi))

        for term in terms:
            idx, _ = draws[term]
            pool = pools[term]
            n = counts[term]
            if term in ("all", "out"):
                target = tape.constant(pool.colors[idx])
                rc = ad.sub(_segment(out.color_coarse, term), target)
                rf = ad.sub(_segment(out.color_fine, term), target)
                if term == "out":
                    m = tape.constant(pool.masks[idx].reshape(-1, 1))
                    rc, rf = ad.mul(rc, m), ad.mul(rf, m)
                t = ad.scale(ad.add(ad.sum_(ad.mul(rc, rc)), ad.sum_(ad.mul(rf, rf))),
                             1.0 / n)
                components["color_all" if term == "all" else "color_out"] = float(t.value)
            else:
                target = tape.constant(pool.depths[idx] * depth_scale)
                rc = ad.sub(ad.scale(_segment(out.depth_coarse, term), depth_scale), target)
                rf = ad.sub(ad.scale(_segment(out.depth_fine, term), depth_scale), target)
                if job.masked_depth:
                    m = tape.constant(pool.masks[idx])
                    rc, rf = ad.mul(rc, m), ad.mul(rf, m)
                t = ad.scale(ad.add(ad.sum_(ad.mul(rc, rc)), ad.sum_(ad.mul(rf, rf))),
                             job.depth_weight / n)
                components["depth"] = float(t.value)
            total = t if total is None else ad.add(total, t)

        total_val = float(total.value)
        if not np.isfinite(total_val):
            raise RuntimeError(f"non-finite inpainting loss at step {step}: {components}")
        ad.backward(total)
        grads = ad.collect_grads([pt[k] for k in names])
        ad.adam_step([field.params[k] for k in names], grads, adam, job.lr)
        history.append({"step": step, "loss_total": total_val, **components})
        if progress is not None and step % 100 == 0:
            progress(step)

    if out_dir is not None:
        from pathlib import Path
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        field.save(out / "checkpoint.npz")
        save_history_csv(history, out / "history.csv")
    return field, history


def baseline1(field: RadianceField, guidance: PosedImageSet, job: InpaintJob, *,
              out_dir=None, progress=None):
    """Per-view color updating: fit every guiding image everywhere, no depth."""
    b1 = replace(job, mode="baseline1",
                 all_views=tuple(range(len(guidance.views))),
                 out_views=(), depth_views=(), depth_weight=0.0)
    return inpaint(field, guidance, b1, out_dir=out_dir, progress=progress)


def baseline2(guidance: PosedImageSet, field_config, train_cfg: TrainConfig, *,
              out_dir=None):
    """Masked-mse retraining: a fresh randomly initialized field fit to the
    guiding images outside the transferred masks only."""
    fresh = RadianceField.create(field_config, seed=train_cfg.seed)
    if out_dir is not None:
        train_cfg = replace(train_cfg, out_dir=str(out_dir))
    return train(fresh, guidance, train_cfg, loss="masked_mse")


def view_consistency(field: RadianceField, pose_a, pose_b, region_mask, *,
                     rel_tol: float = 0.02, abs_tol: float = 0.01,
                     level: str = "fine") -> float:
    """Mean absolute color difference between a view's masked-region pixels
    and their reprojections into a second view (lower = more consistent).

    Returns NaN when no masked pixel is mutually visible.
    """
    img_a, dep_a = render_view(field, pose_a, level=level)
    img_b, dep_b = render_view(field, pose_b, level=level)
    h, w = dep_b.shape
    rows, cols = np.nonzero(np.asarray(region_mask) == 0)
    if len(rows) == 0:
        return float("nan")
    uv = np.stack([cols + 0.5, rows + 0.5], axis=-1)
    pts = pose_a.unproject(uv, dep_a[rows, cols])
    buv, bdist, in_front = pose_b.project(pts)
    bc = np.floor(buv[:, 0]).astype(np.int64)
    br = np.floor(buv[:, 1]).astype(np.int64)
    ok = in_front & (bc >= 0) & (bc < w) & (br >= 0) & (br < h)
    if not ok.any():
        return float("nan")
    visible = np.abs(bdist[ok] - dep_b[br[ok], bc[ok]]) \
        <= rel_tol * np.abs(dep_b[br[ok], bc[ok]]) + abs_tol
    if not visible.any():
        return float("nan")
    ca = img_a[rows[ok][visible], cols[ok][visible]]
    cb = img_b[br[ok][visible], bc[ok][visible]]
    return float(np.mean(np.abs(ca.astype(np.float64) - cb.astype(np.float64))))


# ---------------------------------------------------------------------------
# ablation protocol


def depth_ablation_grid(base: InpaintJob) -> list:
    """color-only, depth-only and the combined objective, same split."""
    return [replace(base, mode="color_only"),
            replace(base, mode="depth_only"),
            replace(base, mode="ours")]


def view_count_grid(base: InpaintJob, n_views: int, seed: int = 0) -> list:
    """Sweep of how many views receive full-image color supervision: the user
    view only, three random sampled views, or every sampled view."""
    u = base.user_view_index
    sampled = tuple(i for i in range(n_views) if i != u)
    rng = np.random.default_rng(seed)
    three = tuple(sorted(rng.choice(sampled, size=3, replace=False).tolist()))
    jobs = [
        replace(base, mode="ours", all_views=(u,), out_views=sampled),
        replace(base, mode="ours", all_views=three,
                out_views=tuple(i for i in sampled if i not in three)),
        replace(base, mode="ours", all_views=sampled, out_views=(u,)),
    ]
    return jobs


def ablate(field: RadianceField, guidance: PosedImageSet, job_grid, *,
           removed_field=None, eval_masks=None, consistency_pair=None,
           out_path=None) -> list:
    """Run a grid of jobs from the same field + guidance and tabulate metrics.

    When a ground-truth field and evaluation masks are given, rows carry
    masked PSNR / masked depth error / outside-mask color error against it;
    view consistency is always reported. Returns the rows (dicts)."""
    trajectory = guidance.poses
    if consistency_pair is None:
        consistency_pair = (0, min(6, len(trajectory) - 1))
    rows = []
    for i, job in enumerate(job_grid):
        updated, history = inpaint(field, guidance, job)
        row = {
            "job": i,
            "mode": job.mode,
            "n_all_views": len(job.all_views),
            "final_loss": history[-1]["loss_total"],
            "depth_loss_history_zero": all(h["depth"] == 0.0 for h in history),
        }
        a, b = consistency_pair
        row["view_consistency"] = view_consistency(
            updated, trajectory[a], trajectory[b],
            eval_masks[a] if eval_masks is not None else job.user_mask)
        if removed_field is not None and eval_masks is not None:
            ps_m, dep_m, err_out = [], [], []
            for v in range(len(trajectory)):
                if not (eval_masks[v] == 0).any():
                    continue
                img, dep = render_view(updated, trajectory[v])
                g_img, g_dep = render_view(removed_field, trajectory[v])
                ps_m.append(psnr(img, g_img, region=eval_masks[v]))
                dep_m.append(masked_depth_error(dep, g_dep, eval_masks[v]))
                outside = eval_masks[v] == 1
                err_out.append(float(np.mean(
                    (img[outside].astype(np.float64) - g_img[outside]) ** 2)))
            row["psnr_masked"] = float(np.mean(ps_m))
            row["depth_err_masked"] = float(np.mean(dep_m))
            row["color_err_outside"] = float(np.mean(err_out))
        rows.append(row)
    if out_path is not None:
        save_history_csv(rows, out_path)
    return rows
