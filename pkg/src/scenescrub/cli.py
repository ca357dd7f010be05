"""Command-line entry points for the full pipeline.

Every subcommand is a thin wrapper over one library operation; the HTTP
service (``serve``) runs the same code paths, so a job launched either way
from identical inputs and seed produces bit-identical checkpoints.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .cameras import make_trajectory
from .datasets import (PosedImageSet, load_dataset, save_dataset, load_mask_png,
                       save_mask_png, save_image_png)
from .field import RadianceField, render_view
from .guidance import build_guidance, render_trajectory
from .maskwarp import transfer_mask
from .metrics import evaluate_job
from .presets import desk_field_config, desk_train_config, DESK_INPAINT_STEPS
from .removal import (InpaintJob, ablate, baseline1, baseline2,
                      depth_ablation_grid, inpaint, view_count_grid)
from .scenes import BUNDLED_SCENES, bundled_scene, default_trajectory, make_pair
from .training import TrainConfig, save_history_csv, train


def _cmd_gen_scene(args):
    scene = bundled_scene(args.name)
    traj = default_trajectory(scene, n_views=args.views,
                              resolution=(args.resolution, args.resolution))
    original, removed, _ = make_pair(scene, traj)
    out = Path(args.out)
    save_dataset(original, out / "original")
    save_dataset(removed, out / "removed")
    print(f"wrote {out}/original and {out}/removed ({args.views} views)")
    return 0


def _cmd_train(args):
    ds = load_dataset(args.dataset)
    if args.config:
        cfg = TrainConfig.from_file(args.config)
    else:
        cfg = desk_train_config(steps=args.steps, seed=args.seed)
    cfg.out_dir = args.out
    fc = desk_field_config(near=ds.meta["near"], far=ds.meta["far"])
    field = RadianceField.create(fc, seed=cfg.seed)
    train(field, ds, cfg, loss=args.loss)
    print(f"trained {cfg.steps} steps; checkpoint at {Path(args.out) / 'checkpoint.npz'}")
    return 0


def _cmd_render(args):
    field = RadianceField.load(args.checkpoint)
    ds = load_dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    indices = [args.view] if args.view is not None else range(len(ds.views))
    for i in indices:
        img, dep = render_view(field, ds[i].pose, level=args.level)
        save_image_png(out / f"render_{i:03d}.png", img)
        np.save(out / f"depth_{i:03d}.npy", dep)
    print(f"rendered {len(list(indices))} view(s) into {out}")
    return 0


def _cmd_transfer_mask(args):
    field = RadianceField.load(args.checkpoint)
    ds = load_dataset(args.dataset)
    user_mask = load_mask_png(args.mask)
    renders = render_trajectory(field, ds.poses)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, view in enumerate(renders.views):
        if i == args.view:
            mask = user_mask
        else:
            mask, degenerate = transfer_mask(
                user_mask, ds[args.view].pose, renders[args.view].depth,
                view.pose, view.depth)
            if degenerate:
                print(f"warning: degenerate transfer into view {i}", file=sys.stderr)
        save_mask_png(out / f"mask_{i:03d}.png", mask)
    print(f"wrote {len(renders.views)} masks into {out}")
    return 0


def _cmd_build_guidance(args):
    field = RadianceField.load(args.checkpoint)
    ds = load_dataset(args.dataset)
    user_mask = load_mask_png(args.mask)
    build_guidance(field, ds.poses, args.view, user_mask, out_dir=args.out)
    print(f"guidance written under {args.out}")
    return 0


def _cmd_inpaint(args):
    field = RadianceField.load(args.checkpoint)
    ds = load_dataset(args.dataset)
    user_mask = load_mask_png(args.mask)
    out = Path(args.out)
    guidance, _ = build_guidance(field, ds.poses, args.view, user_mask, out_dir=out)
    job = InpaintJob.default_split(
        len(ds.views), args.view, user_mask, steps=args.steps, seed=args.seed,
        mode=args.mode, depth_weight=args.depth_weight)
    if args.mode == "baseline2":
        fc = field.config
        updated, history = baseline2(guidance, fc,
                                     desk_train_config(steps=args.steps, seed=args.seed,
                                                       out_dir=str(out)))
    elif args.mode == "baseline1":
        updated, history = baseline1(field, guidance, job, out_dir=out)
    else:
        updated, history = inpaint(field, guidance, job, out_dir=out)
    updated.save(out / "checkpoint.npz")
    save_history_csv(history, out / "history.csv")
    (out / "job.json").write_text(json.dumps({
        "view": args.view, "mode": args.mode, "steps": args.steps,
        "seed": args.seed, "depth_weight": args.depth_weight,
        "mask": str(args.mask), "checkpoint": str(args.checkpoint),
    }, indent=1, sort_keys=True))
    print(f"updated checkpoint + history in {out}")
    return 0


def _cmd_ablate(args):
    field = RadianceField.load(args.checkpoint)
    ds = load_dataset(args.dataset)
    user_mask = load_mask_png(args.mask)
    guidance, _ = build_guidance(field, ds.poses, args.view, user_mask)
    base = InpaintJob.default_split(len(ds.views), args.view, user_mask,
                                    steps=args.steps, seed=args.seed)
    grid = depth_ablation_grid(base) if args.protocol == "depth" \
        else view_count_grid(base, len(ds.views), seed=args.seed)
    removed_field = RadianceField.load(args.gt) if args.gt else None
    eval_masks = [v.mask for v in ds.views] if ds.views[0].mask is not None else None
    rows = ablate(field, guidance, grid, removed_field=removed_field,
                  eval_masks=eval_masks, out_path=Path(args.out) / "ablation.csv")
    for row in rows:
        print(json.dumps(row, sort_keys=True, default=float))
    return 0


def _cmd_evaluate(args):
    field = RadianceField.load(args.job + "/checkpoint.npz"
                               if Path(args.job).is_dir() else args.job)
    gt = RadianceField.load(args.gt)
    ds = load_dataset(args.dataset)
    masks = [v.mask for v in ds.views]
    if any(m is None for m in masks):
        print("error: dataset carries no masks to evaluate against", file=sys.stderr)
        return 1
    raw = [v.image for v in load_dataset(args.raw).views] if args.raw else None
    report = evaluate_job(field, gt, ds.poses, masks, raw_removed=raw,
                          out_dir=args.out)
    summary = {k: v for k, v in report.items() if k != "per_view"}
    print(json.dumps(summary, sort_keys=True, default=float))
    return 0


def _cmd_serve(args):
    import uvicorn
    from .server import create_app
    app = create_app(checkpoint=args.checkpoint, dataset=args.dataset,
                     jobs_dir=args.data_dir, gt_checkpoint=args.gt,
                     ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scenescrub",
                                description="radiance-field scene editing toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scene", help="write an original/removed dataset pair")
    g.add_argument("--name", required=True, choices=sorted(BUNDLED_SCENES))
    g.add_argument("--out", required=True)
    g.add_argument("--views", type=int, default=24)
    g.add_argument("--resolution", type=int, default=64)
    g.set_defaults(fn=_cmd_gen_scene)

    t = sub.add_parser("train", help="train a field on a dataset")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="TrainConfig JSON file")
    t.add_argument("--steps", type=int, default=20000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--loss", choices=("mse", "masked_mse"), default="mse")
    t.set_defaults(fn=_cmd_train)

    r = sub.add_parser("render", help="render trajectory views from a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--dataset", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--view", type=int)
    r.add_argument("--level", choices=("coarse", "fine"), default="fine")
    r.set_defaults(fn=_cmd_render)

    m = sub.add_parser("transfer-mask", help="propagate a user mask to all views")
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--dataset", required=True)
    m.add_argument("--mask", required=True)
    m.add_argument("--view", type=int, required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(fn=_cmd_transfer_mask)

    b = sub.add_parser("build-guidance", help="masks + guiding color/depth per view")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--dataset", required=True)
    b.add_argument("--mask", required=True)
    b.add_argument("--view", type=int, required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(fn=_cmd_build_guidance)

    i = sub.add_parser("inpaint", help="remove the masked object from the field")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--dataset", required=True)
    i.add_argument("--mask", required=True)
    i.add_argument("--view", type=int, required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--steps", type=int, default=DESK_INPAINT_STEPS)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--mode", choices=("ours", "baseline1", "baseline2",
                                      "color_only", "depth_only"), default="ours")
    i.add_argument("--depth-weight", type=float, default=1.0)
    i.set_defaults(fn=_cmd_inpaint)

    a = sub.add_parser("ablate", help="run the loss/view-count ablation grids")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--dataset", required=True)
    a.add_argument("--mask", required=True)
    a.add_argument("--view", type=int, required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--protocol", choices=("depth", "views"), default="depth")
    a.add_argument("--steps", type=int, default=DESK_INPAINT_STEPS)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--gt", help="removed-set checkpoint for ground-truth metrics")
    a.set_defaults(fn=_cmd_ablate)

    e = sub.add_parser("evaluate", help="compare a job result against ground truth")
    e.add_argument("--job", required=True, help="job dir or checkpoint file")
    e.add_argument("--gt", required=True, help="removed-set checkpoint")
    e.add_argument("--dataset", required=True, help="dataset with true masks")
    e.add_argument("--raw", help="removed dataset dir for the raw-image column")
    e.add_argument("--out", required=True)
    e.set_defaults(fn=_cmd_evaluate)

    s = sub.add_parser("serve", help="HTTP service over one trained checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--data-dir", required=True, help="job directory root")
    s.add_argument("--gt", help="optional ground-truth checkpoint for /compare")
    s.add_argument("--ui-dir", help="static frontend directory to serve at /")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.set_defaults(fn=_cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, IndexError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
