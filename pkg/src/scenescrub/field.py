"""The radiance field: (position, direction) -> (color, density), with
positional encoding, coarse/fine hierarchical sampling and differentiable
rendering of color and expected-termination depth along rays.

Rendering quadrature, for samples t_1 < ... < t_N with deltas
d_i = t_{i+1} - t_i (the last delta runs to the far plane):

    T_i   = exp(-sum_{j<i} sigma_j d_j)
    w_i   = T_i (1 - exp(-sigma_i d_i))
    color = sum_i w_i c_i + (1 - sum_i w_i) * background
    depth = sum_i w_i t_i

Density is view-independent by construction; color passes through a sigmoid
and density through a relu, so c in [0,1]^3 and sigma >= 0.

Determinism notes: evaluation renders use midpoint sampling (no jitter);
stratified jitter and fine resampling draw per-ray hashed uniforms, so a pixel
renders identically alone or inside a batch. Hidden widths should be
multiples of 32 -- BLAS matmul row results are only batch-size-invariant for
output widths >= 32, and the narrow output heads (density, rgb) are computed
with broadcast-multiply + sum reductions instead of matmul for the same
reason.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, mix64, hashed_uniform
from .cameras import CameraPose

CHECKPOINT_VERSION = 1
EVAL_CHUNK_RAYS = 1024
_SALT_COARSE = 0x000C0A25E
_SALT_FINE = 0x0000F17E5


def positional_encode(p, levels: int):
    """Sinusoidal features: (sin 2^0 pi p, cos 2^0 pi p, ..., sin 2^{L-1} pi p,
    cos 2^{L-1} pi p), concatenated along the last axis.

    Output width = input width * 2 * levels. Accepts a vector or any batch of
    vectors.
    """
    if levels < 0:
        raise ValueError("levels must be >= 0")
    p = np.asarray(p)
    if levels == 0:
        return np.zeros(p.shape[:-1] + (0,), dtype=p.dtype)
    dtype = p.dtype if p.dtype.kind == "f" else np.dtype(np.float64)
    d = p.shape[-1]
    # one fused sin over (..., 2L, D): cos(x) written as sin(x + pi/2)
    freqs = np.repeat((2.0 ** np.arange(levels)).astype(dtype) * dtype.type(np.pi), 2)
    phase = np.tile(np.array([0.0, np.pi / 2.0], dtype=dtype), levels)
    arg = p[..., None, :] * freqs[:, None]
    arg += phase[:, None]
    out = np.sin(arg)
    return out.reshape(p.shape[:-1] + (2 * levels * d,))


@dataclass
class FieldConfig:
    near: float
    far: float
    pos_levels: int = 8
    dir_levels: int = 4
    hidden_width: int = 128
    hidden_layers: int = 6
    skip_at: int = 3
    color_width: int = 32
    n_coarse: int = 64
    n_fine: int = 128
    pos_scale: float = 1.0
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.near < self.far:
            raise ValueError(f"near ({self.near}) must be < far ({self.far})")
        if self.n_coarse < 2:
            raise ValueError("n_coarse must be >= 2")
        if not 0 < self.skip_at < self.hidden_layers:
            raise ValueError("skip_at must fall inside the hidden stack")
        self.background = tuple(float(c) for c in self.background)

    @property
    def pos_dim(self):
        return 3 * 2 * self.pos_levels

    @property
    def dir_dim(self):
        return 3 * 2 * self.dir_levels


@dataclass
class RayRender:
    """Per-ray render: coarse/fine color and depth plus fine-pass weights."""

    color_coarse: np.ndarray
    color_fine: np.ndarray
    depth_coarse: float
    depth_fine: float
    weights: np.ndarray


@dataclass
class RenderBatch:
    """Differentiable render of a ray batch (all fields are tape tensors
    except the sample positions)."""

    color_coarse: Tensor
    color_fine: Tensor
    depth_coarse: Tensor
    depth_fine: Tensor
    weights_coarse: Tensor
    weights_fine: Tensor
    acc_coarse: Tensor
    acc_fine: Tensor
    t_coarse: np.ndarray
    t_fine: np.ndarray


class RadianceField:
    """Coarse + fine perceptrons over encoded positions/directions."""

    def __init__(self, config: FieldConfig, params: dict):
        self.config = config
        self.params = params

    # -- construction -------------------------------------------------------

    @classmethod
    def create(cls, config: FieldConfig, seed: int = 0) -> "RadianceField":
        rng = np.random.default_rng(seed)
        params = {}
        for level in ("coarse", "fine"):
            params.update(cls._init_level(config, level, rng))
        return cls(config, params)

    @staticmethod
    def _glorot(rng, fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_in, fan_out)).astype(np.float32)

    @classmethod
    def _init_level(cls, cfg, level, rng):
        p = {}
        w = cfg.hidden_width
        for i in range(cfg.hidden_layers):
            d_in = cfg.pos_dim if i == 0 else w
            p[f"{level}/layer{i}/w"] = cls._glorot(rng, d_in, w)
            if i == cfg.skip_at:  # extra input branch carrying the encoding
                p[f"{level}/layer{i}/ws"] = cls._glorot(rng, cfg.pos_dim, w)
            p[f"{level}/layer{i}/b"] = np.zeros(w, dtype=np.float32)
        # output heads are stored row-major (out, in) for linear_rows;
        # the density bias starts slightly positive so the relu head is live
        p[f"{level}/sigma/w"] = cls._glorot(rng, w, 1).T.copy()
        p[f"{level}/sigma/b"] = np.full(1, 0.1, dtype=np.float32)
        p[f"{level}/feat/w"] = cls._glorot(rng, w, w)
        p[f"{level}/feat/b"] = np.zeros(w, dtype=np.float32)
        p[f"{level}/color/w"] = cls._glorot(rng, w, cfg.color_width)
        p[f"{level}/color/wd"] = cls._glorot(rng, cfg.dir_dim, cfg.color_width)
        p[f"{level}/color/b"] = np.zeros(cfg.color_width, dtype=np.float32)
        p[f"{level}/rgb/w"] = cls._glorot(rng, cfg.color_width, 3).T.copy()
        p[f"{level}/rgb/b"] = np.zeros(3, dtype=np.float32)
        return p

    def copy(self) -> "RadianceField":
        return RadianceField(self.config, {k: v.copy() for k, v in self.params.items()})

    def param_names(self):
        return sorted(self.params)

    # -- checkpoints ---------------------------------------------------------

    def save(self, path):
        meta = {"checkpoint_version": CHECKPOINT_VERSION, "config": asdict(self.config)}
        header = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
        arrays = {k.replace("/", "__"): v for k, v in self.params.items()}
        with open(path, "wb") as f:
            np.savez(f, __meta__=header, **arrays)

    @classmethod
    def load(cls, path) -> "RadianceField":
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('checkpoint_version')}")
            cfg_d = meta["config"]
            cfg_d["background"] = tuple(cfg_d["background"])
            cfg = FieldConfig(**cfg_d)
            params = {k.replace("__", "/"): data[k].copy() for k in data.files if k != "__meta__"}
        return cls(cfg, params)

    # -- tape plumbing -------------------------------------------------------

    def bind(self, tape: Tape, trainable: bool = False) -> dict:
        """Record the parameter arrays on a tape (as params or constants)."""
        make = tape.param if trainable else tape.constant
        return {k: make(v) for k, v in self.params.items()}

    def _mlp(self, tape, pt, level: str, enc_x: Tensor, enc_d: Tensor):
        """Run one perceptron; returns (rgb (P,3), sigma (P,1)) tensors."""
        cfg = self.config
        h = ad.affine_relu(enc_x, pt[f"{level}/layer0/w"], pt[f"{level}/layer0/b"])
        for i in range(1, cfg.hidden_layers):
            if i == cfg.skip_at:
                h = ad.affine2_relu(h, pt[f"{level}/layer{i}/w"],
                                    enc_x, pt[f"{level}/layer{i}/ws"],
                                    pt[f"{level}/layer{i}/b"])
            else:
                h = ad.affine_relu(h, pt[f"{level}/layer{i}/w"], pt[f"{level}/layer{i}/b"])
        sigma = ad.relu(ad.linear_rows(h, pt[f"{level}/sigma/w"], pt[f"{level}/sigma/b"]))
        feat = ad.affine(h, pt[f"{level}/feat/w"], pt[f"{level}/feat/b"])
        ch = ad.affine2_relu(feat, pt[f"{level}/color/w"],
                             enc_d, pt[f"{level}/color/wd"], pt[f"{level}/color/b"])
        rgb = ad.sigmoid(ad.linear_rows(ch, pt[f"{level}/rgb/w"], pt[f"{level}/rgb/b"]))
        return rgb, sigma

    def query(self, x, d, level: str = "fine"):
        """Field query at positions x (P,3 or 3,) and unit directions d.

        Returns (rgb, sigma) as numpy arrays; rgb in [0,1]^3, sigma >= 0.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float32))
        d = np.atleast_2d(np.asarray(d, dtype=np.float32))
        d = np.broadcast_to(d, x.shape)
        tape = Tape()
        pt = self.bind(tape)
        enc_x = tape.constant(positional_encode(x * self.config.pos_scale, self.config.pos_levels))
        enc_d = tape.constant(positional_encode(d, self.config.dir_levels))
        rgb, sigma = self._mlp(tape, pt, level, enc_x, enc_d)
        return rgb.value.copy(), sigma.value.reshape(-1).copy()

    # -- sampling ------------------------------------------------------------

    def sample_coarse(self, n_rays: int, stratified: bool, ray_seeds):
        cfg = self.config
        edges = np.linspace(cfg.near, cfg.far, cfg.n_coarse + 1, dtype=np.float32)
        width = edges[1] - edges[0]
        if stratified:
            u = hashed_uniform(ray_seeds, cfg.n_coarse, _SALT_COARSE)
        else:
            u = np.full((n_rays, cfg.n_coarse), 0.5, dtype=np.float32)
        return edges[:-1][None, :] + u * width

    def sample_fine(self, t_coarse, weights, stratified: bool, ray_seeds):
        """Inverse-CDF resampling of the coarse bins; weights are detached."""
        cfg = self.config
        n_rays = t_coarse.shape[0]
        w = weights.astype(np.float64) + 1e-5
        cdf = np.cumsum(w, axis=1)
        cdf /= cdf[:, -1:]
        if stratified:
            u = hashed_uniform(ray_seeds, cfg.n_fine, _SALT_FINE).astype(np.float64)
            u = (np.arange(cfg.n_fine)[None, :] + u) / cfg.n_fine
        else:
            u = np.broadcast_to((np.arange(cfg.n_fine) + 0.5) / cfg.n_fine, (n_rays, cfg.n_fine))
        edges = np.linspace(cfg.near, cfg.far, cfg.n_coarse + 1)
        # batched searchsorted: count of cdf entries <= u, per row
        idx = (cdf[:, None, :] <= u[:, :, None]).sum(axis=-1)
        idx = np.clip(idx, 0, cfg.n_coarse - 1)
        cdf_lo = np.take_along_axis(np.concatenate([np.zeros((n_rays, 1)), cdf], axis=1), idx, axis=1)
        cdf_hi = np.take_along_axis(cdf, idx, axis=1)
        denom = np.where(cdf_hi - cdf_lo < 1e-12, 1.0, cdf_hi - cdf_lo)
        frac = (u - cdf_lo) / denom
        lo = edges[idx]
        hi = edges[idx + 1]
        t_fine = lo + frac * (hi - lo)
        t_all = np.sort(np.concatenate([t_coarse.astype(np.float64), t_fine], axis=1), axis=1)
        return t_all.astype(np.float32)

    # -- rendering -----------------------------------------------------------

    def composite(self, tape, t_vals, sigma: Tensor, rgb: Tensor, background=None):
        """Volume-rendering quadrature over given sample positions.

        t_vals: (B,N) numpy, strictly increasing per row. sigma: (B,N) tensor,
        rgb: (B,N,3) tensor. Returns (color (B,3), depth (B,), weights (B,N),
        acc (B,)) as tensors.
        """
        cfg = self.config
        bg = cfg.background if background is None else background
        deltas = np.concatenate([np.diff(t_vals, axis=1),
                                 cfg.far - t_vals[:, -1:]], axis=1).astype(np.float32)
        sd = ad.mul(sigma, tape.constant(deltas))
        transmit = ad.exp(ad.neg(ad.cumsum_exclusive(sd, axis=1)))
        alpha = ad.shift(ad.neg(ad.exp(ad.neg(sd))), 1.0)
        weights = ad.mul(transmit, alpha)
        acc = ad.sum_(weights, axis=1)
        w3 = ad.reshape(weights, weights.shape + (1,))
        color = ad.sum_(ad.mul(w3, rgb), axis=1)
        if any(c != 0.0 for c in bg):
            residual = ad.shift(ad.neg(acc), 1.0)
            bg_t = tape.constant(np.asarray(bg, dtype=np.float32))
            color = ad.add(color, ad.mul(ad.reshape(residual, (-1, 1)), bg_t))
        depth = ad.sum_(ad.mul(weights, tape.constant(t_vals)), axis=1)
        return color, depth, weights, acc

    def _render_level(self, tape, pt, level, origins, dirs, t_vals, enc_d_ray):
        n_rays, n_samples = t_vals.shape
        pts = origins[:, None, :] + t_vals[..., None] * dirs[:, None, :]
        enc_x = tape.constant(
            positional_encode(pts.reshape(-1, 3) * self.config.pos_scale, self.config.pos_levels))
        enc_d = tape.constant(np.repeat(enc_d_ray, n_samples, axis=0))
        rgb_flat, sigma_flat = self._mlp(tape, pt, level, enc_x, enc_d)
        sigma = ad.reshape(sigma_flat, (n_rays, n_samples))
        rgb = ad.reshape(rgb_flat, (n_rays, n_samples, 3))
        return self.composite(tape, t_vals, sigma, rgb)

    def render_batch(self, tape, origins, dirs, *, params_t=None, stratified=False,
                     ray_seeds=None) -> RenderBatch:
        """Differentiable coarse+fine render of a ray batch on ``tape``.

        origins/dirs: (B,3) float32, dirs unit length. ``ray_seeds`` drives
        stratified jitter and must be per-ray stable for reproducibility.
        """
        origins = np.ascontiguousarray(origins, dtype=np.float32)
        dirs = np.ascontiguousarray(dirs, dtype=np.float32)
        n_rays = len(origins)
        if ray_seeds is None:
            ray_seeds = np.arange(n_rays, dtype=np.uint64)
        pt = params_t if params_t is not None else self.bind(tape)
        enc_d_ray = positional_encode(dirs, self.config.dir_levels)

        t_coarse = self.sample_coarse(n_rays, stratified, ray_seeds)
        c_color, c_depth, c_weights, c_acc = self._render_level(
            tape, pt, "coarse", origins, dirs, t_coarse, enc_d_ray)

        t_fine = self.sample_fine(t_coarse, c_weights.value.copy(), stratified, ray_seeds)
        f_color, f_depth, f_weights, f_acc = self._render_level(
            tape, pt, "fine", origins, dirs, t_fine, enc_d_ray)

        return RenderBatch(c_color, f_color, c_depth, f_depth, c_weights, f_weights,
                           c_acc, f_acc, t_coarse, t_fine)


# ---------------------------------------------------------------------------
# convenience renderers


def render_ray(field: RadianceField, ray, stratified: bool = False,
               rng_seed: int = 0) -> RayRender:
    """Render a single ray; matches the corresponding pixel of render_view
    bit-exactly when given that pixel's seed."""
    origin, direction = ray
    direction = np.asarray(direction, dtype=np.float64)
    n = np.linalg.norm(direction)
    if abs(n - 1.0) > 1e-5:
        raise ValueError(f"ray direction must be unit length (|d| = {n:.6f})")
    tape = Tape()
    out = field.render_batch(tape, np.asarray(origin, dtype=np.float32)[None],
                             direction.astype(np.float32)[None],
                             stratified=stratified,
                             ray_seeds=np.asarray([rng_seed], dtype=np.uint64))
    return RayRender(out.color_coarse.value[0].copy(), out.color_fine.value[0].copy(),
                     float(out.depth_coarse.value[0]), float(out.depth_fine.value[0]),
                     out.weights_fine.value[0].copy())


def pixel_seed(view_seed: int, row: int, col: int, width: int):
    """Seed for the ray of pixel (row, col) inside a seeded view render."""
    return mix64(view_seed, row * width + col)


def render_view(field: RadianceField, pose: CameraPose, resolution=None,
                level: str = "fine", stratified: bool = False, seed: int = 0,
                chunk_rays: int = EVAL_CHUNK_RAYS):
    """Render a full view. Returns (image (h,w,3), depth (h,w)) float32.

    Evaluation renders (stratified=False) are deterministic; with jitter the
    per-pixel seeds derive from ``seed`` so results are chunking-independent.
    """
    if level not in ("coarse", "fine"):
        raise ValueError(f"level must be 'coarse' or 'fine', got {level!r}")
    if resolution is not None and tuple(resolution) != tuple(pose.resolution):
        pose = pose.scaled(resolution)
    w, h = pose.resolution
    origins, dirs = pose.rays()
    origins = origins.astype(np.float32)
    dirs = dirs.astype(np.float32)
    seeds = mix64(np.full(w * h, seed, dtype=np.uint64), np.arange(w * h, dtype=np.uint64))
    images = np.empty((w * h, 3), dtype=np.float32)
    depths = np.empty(w * h, dtype=np.float32)
    for lo in range(0, w * h, chunk_rays):
        hi = min(lo + chunk_rays, w * h)
        tape = Tape()
        out = field.render_batch(tape, origins[lo:hi], dirs[lo:hi],
                                 stratified=stratified, ray_seeds=seeds[lo:hi])
        if level == "fine":
            images[lo:hi] = out.color_fine.value
            depths[lo:hi] = out.depth_fine.value
        else:
            images[lo:hi] = out.color_coarse.value
            depths[lo:hi] = out.depth_coarse.value
    return images.reshape(h, w, 3), depths.reshape(h, w)
