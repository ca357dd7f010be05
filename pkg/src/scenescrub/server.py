"""HTTP service backing the browser UI.

The service wraps one pre-trained checkpoint + its dataset. Jobs are queued
FIFO and executed by a single background worker (one desk-scale optimization
saturates the machine); every job artifact lives in a per-job directory and
the API is a thin view over that directory, so finished jobs survive
restarts. Orphaned jobs (queued/running at crash time) are marked failed on
startup.

Routes (JSON unless noted):
  GET  /views                         trajectory poses + thumbnail PNGs (b64)
  GET  /render?view=i&level=fine&kind=color|depth   raw PNG
  POST /jobs                          {view_index, mask_png_b64, config{...}}
                                      -> {job_id}; mask PNG: 0 = remove,
                                      255 = keep, at render resolution
  GET  /jobs                          job listing
  GET  /jobs/{id}                     status + loss history + preview (b64)
  GET  /jobs/{id}/result?view=i       raw PNG of the updated field's render
  GET  /jobs/{id}/compare?view=i      original | result [| ground truth] strip
"""

from __future__ import annotations

import base64
import io
import json
import logging
import queue
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import Response
from pydantic import BaseModel, Field
from PIL import Image

from .datasets import load_dataset, save_image_png
from .field import RadianceField, render_view
from .guidance import build_guidance
from .presets import DESK_INPAINT_STEPS, desk_train_config
from .removal import InpaintJob, baseline1, baseline2, inpaint
from .training import save_history_csv

log = logging.getLogger(__name__)

JOB_STATES = ("queued", "running", "done", "failed")


class JobConfig(BaseModel):
    steps: int = Field(default=DESK_INPAINT_STEPS, gt=0)
    mode: str = Field(default="ours", pattern="^(ours|baseline1|baseline2|color_only|depth_only)$")
    seed: int = 0
    depth_weight: float = 1.0


class JobRequest(BaseModel):
    view_index: int
    mask_png_b64: str
    config: JobConfig = Field(default_factory=JobConfig)


def _png_bytes(image) -> bytes:
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def _depth_png_bytes(depth, near, far) -> bytes:
    norm = np.clip((np.asarray(depth) - near) / (far - near), 0.0, 1.0)
    buf = io.BytesIO()
    Image.fromarray((norm * 255.0).round().astype(np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


class JobStore:
    """Per-job directories with atomically updated status files."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def ids(self):
        return sorted(p.name for p in self.root.iterdir()
                      if p.is_dir() and (p / "status.json").exists())

    def dir(self, job_id: str) -> Path:
        return self.root / job_id

    def status(self, job_id: str) -> dict:
        path = self.dir(job_id) / "status.json"
        if not path.exists():
            raise KeyError(job_id)
        return json.loads(path.read_text())

    def write_status(self, job_id: str, status: dict):
        path = self.dir(job_id) / "status.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(status, sort_keys=True))
        tmp.replace(path)

    def new_job(self, mask_bytes: bytes, view_index: int, config: JobConfig) -> str:
        job_id = f"job-{len(self.ids()) + 1:04d}"
        d = self.dir(job_id)
        d.mkdir(parents=True)
        (d / "input_mask.png").write_bytes(mask_bytes)
        (d / "job.json").write_text(json.dumps(
            {"view_index": view_index, **config.model_dump()}, sort_keys=True))
        self.write_status(job_id, {"state": "queued", "step": 0,
                                   "total_steps": config.steps})
        return job_id

    def fail_orphans(self):
        for job_id in self.ids():
            st = self.status(job_id)
            if st["state"] in ("queued", "running"):
                st["state"] = "failed"
                st["error"] = "interrupted by service restart"
                self.write_status(job_id, st)


def create_app(checkpoint, dataset, jobs_dir, gt_checkpoint=None, ui_dir=None) -> FastAPI:
    field = RadianceField.load(checkpoint)
    ds = load_dataset(dataset)
    gt_field = RadianceField.load(gt_checkpoint) if gt_checkpoint else None
    store = JobStore(Path(jobs_dir))
    store.fail_orphans()
    w, h = ds.resolution

    app = FastAPI(title="scenescrub")
    render_cache: dict = {}
    thumbs: list = []

    def _render(which_field, view: int, level: str):
        key = (id(which_field), view, level)
        if key not in render_cache:
            render_cache[key] = render_view(which_field, ds[view].pose, level=level)
        return render_cache[key]

    # ---- background worker ------------------------------------------------

    jobs_q: queue.Queue = queue.Queue()

    def _run_job(job_id: str):
        d = store.dir(job_id)
        spec = json.loads((d / "job.json").read_text())
        cfg = JobConfig(**{k: spec[k] for k in ("steps", "mode", "seed", "depth_weight")})
        view_index = spec["view_index"]
        mask = np.asarray(Image.open(d / "input_mask.png").convert("L"))
        user_mask = (mask >= 128).astype(np.uint8)

        status = store.status(job_id)
        status["state"] = "running"
        store.write_status(job_id, status)

        def progress(step):
            status["step"] = step
            store.write_status(job_id, status)

        try:
            guidance, _ = build_guidance(field, ds.poses, view_index, user_mask,
                                         out_dir=d)
            if cfg.mode == "baseline2":
                updated, history = baseline2(
                    guidance, field.config,
                    desk_train_config(steps=cfg.steps, seed=cfg.seed))
            else:
                mode = "ours" if cfg.mode == "baseline1" else cfg.mode
                job = InpaintJob.default_split(
                    len(ds.views), view_index, user_mask, steps=cfg.steps,
                    seed=cfg.seed, mode=mode, depth_weight=cfg.depth_weight)
                if cfg.mode == "baseline1":
                    updated, history = baseline1(field, guidance, job,
                                                 progress=progress)
                else:
                    updated, history = inpaint(field, guidance, job,
                                               progress=progress)
            updated.save(d / "checkpoint.npz")
            save_history_csv(history, d / "history.csv")
            results = d / "results"
            results.mkdir(exist_ok=True)
            for i, pose in enumerate(ds.poses):
                img, dep = render_view(updated, pose)
                save_image_png(results / f"view_{i:03d}.png", img)
                np.save(results / f"depth_{i:03d}.npy", dep)
            status["state"] = "done"
            status["step"] = cfg.steps
            store.write_status(job_id, status)
        except Exception as e:  # surfaced verbatim through the API
            log.exception("job %s failed", job_id)
            status["state"] = "failed"
            status["error"] = str(e)
            store.write_status(job_id, status)

    def _worker():
        while True:
            job_id = jobs_q.get()
            if job_id is None:
                return
            _run_job(job_id)

    threading.Thread(target=_worker, daemon=True, name="scenescrub-jobs").start()

    # ---- routes ------------------------------------------------------------

    @app.get("/views")
    def views():
        if not thumbs:
            for i in range(len(ds.views)):
                img, _ = _render(field, i, "fine")
                small = np.asarray(Image.fromarray(
                    (np.clip(img, 0, 1) * 255).round().astype(np.uint8)
                ).resize((max(w // 2, 16), max(h // 2, 16)), Image.NEAREST)) / 255.0
                thumbs.append(base64.b64encode(_png_bytes(small)).decode())
        return {
            "resolution": [w, h],
            "views": [{"index": i, "pose": ds[i].pose.to_dict(), "thumbnail_png_b64": thumbs[i]}
                      for i in range(len(ds.views))],
        }

    def _check_view(view: int):
        if not 0 <= view < len(ds.views):
            raise HTTPException(status_code=404, detail=f"view {view} does not exist")

    @app.get("/render")
    def render(view: int, level: str = "fine", kind: str = "color"):
        _check_view(view)
        if level not in ("coarse", "fine"):
            raise HTTPException(status_code=422, detail="level must be coarse|fine")
        img, dep = _render(field, view, level)
        if kind == "depth":
            body = _depth_png_bytes(dep, field.config.near, field.config.far)
        elif kind == "color":
            body = _png_bytes(img)
        else:
            raise HTTPException(status_code=422, detail="kind must be color|depth")
        return Response(content=body, media_type="image/png")

    @app.post("/jobs")
    def submit(req: JobRequest):
        _check_view(req.view_index)
        try:
            mask_bytes = base64.b64decode(req.mask_png_b64, validate=True)
            mask_img = Image.open(io.BytesIO(mask_bytes))
        except Exception:
            raise HTTPException(status_code=422, detail="mask_png_b64 is not a valid PNG")
        if mask_img.size != (w, h):
            raise HTTPException(
                status_code=422,
                detail=f"mask resolution {mask_img.size} does not match render "
                       f"resolution {(w, h)}")
        arr = (np.asarray(mask_img.convert("L")) >= 128)
        if not arr.any():
            raise HTTPException(status_code=422, detail="mask removes every pixel")
        job_id = store.new_job(mask_bytes, req.view_index, req.config)
        jobs_q.put(job_id)
        return {"job_id": job_id}

    @app.get("/jobs")
    def jobs():
        return {"jobs": [{"job_id": j, **store.status(j)} for j in store.ids()]}

    def _get_status(job_id: str) -> dict:
        try:
            return store.status(job_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id}")

    @app.get("/jobs/{job_id}")
    def job_detail(job_id: str):
        status = _get_status(job_id)
        d = store.dir(job_id)
        history = []
        hist_path = d / "history.csv"
        if hist_path.exists():
            import csv as _csv
            with open(hist_path) as f:
                history = [{k: float(v) for k, v in row.items()}
                           for row in _csv.DictReader(f)]
        spec = json.loads((d / "job.json").read_text())
        preview = None
        pv = d / "results" / f"view_{spec['view_index']:03d}.png"
        if pv.exists():
            preview = base64.b64encode(pv.read_bytes()).decode()
        return {"job_id": job_id, **status, "config": spec,
                "history": history, "preview_png_b64": preview}

    @app.get("/jobs/{job_id}/result")
    def job_result(job_id: str, view: int):
        _get_status(job_id)
        _check_view(view)
        path = store.dir(job_id) / "results" / f"view_{view:03d}.png"
        if not path.exists():
            raise HTTPException(status_code=409, detail="job has no results yet")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.get("/jobs/{job_id}/compare")
    def job_compare(job_id: str, view: int):
        _get_status(job_id)
        _check_view(view)
        path = store.dir(job_id) / "results" / f"view_{view:03d}.png"
        if not path.exists():
            raise HTTPException(status_code=409, detail="job has no results yet")
        panels = [np.clip(_render(field, view, "fine")[0], 0, 1)]
        panels.append(np.asarray(Image.open(path).convert("RGB")) / 255.0)
        if gt_field is not None:
            panels.append(np.clip(_render(gt_field, view, "fine")[0], 0, 1))
        strip = np.concatenate(panels, axis=1)
        return Response(content=_png_bytes(strip), media_type="image/png")

    if ui_dir:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
