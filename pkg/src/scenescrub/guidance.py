"""Guiding material generation: inpainted color images and completed depth.

Color holes are filled classically: a multi-scale pull-push pass seeds the
hole, then Jacobi diffusion relaxes it toward the discrete harmonic fill;
pixels outside the hole pass through bit-exactly.

Depth holes are filled with a bilateral-space solve in the spirit of the fast
bilateral solver: pixels splat into a coarse (luma, chroma, chroma, x, y)
grid built from the guide image, a graph Laplacian over grid neighbors
provides edge-aware smoothness, and the normal equations

    (S^T C S + lam * L + eps * I) v = S^T C t

are solved by Jacobi-preconditioned conjugate gradients (C = diag of per-pixel
confidence, S = pixel-to-vertex splat, L = D - W of the blur adjacency).
Because vertices pool pixels of similar position and color, the filled depth
respects strong guide edges.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .datasets import PosedImageSet, PosedView
from .field import RadianceField, render_view
from .maskwarp import transfer_mask

EPS_REG = 1e-8


# ---------------------------------------------------------------------------
# color inpainting (rho)


def _pull_push(image, valid):
    """Fill invalid pixels from a weighted mip pyramid (coarse-to-fine)."""
    levels = [(image * valid[..., None], valid.astype(np.float64))]
    while levels[-1][1].size > 1 and not levels[-1][1].all():
        img, w = levels[-1]
        h, ww = w.shape
        ph, pw = (h + 1) // 2 * 2, (ww + 1) // 2 * 2
        pimg = np.zeros((ph, pw, img.shape[2]))
        pw_arr = np.zeros((ph, pw))
        pimg[:h, :ww] = img
        pw_arr[:h, :ww] = w
        cimg = (pimg[0::2, 0::2] + pimg[1::2, 0::2] + pimg[0::2, 1::2] + pimg[1::2, 1::2])
        cw = (pw_arr[0::2, 0::2] + pw_arr[1::2, 0::2] + pw_arr[0::2, 1::2] + pw_arr[1::2, 1::2])
        scale = np.where(cw > 0, 1.0 / np.maximum(cw, 1e-12), 0.0)
        levels.append((cimg * scale[..., None] * np.minimum(cw, 1.0)[..., None],
                       np.minimum(cw, 1.0)))
    out, w = levels[-1]
    out = np.where(w[..., None] > 0, out / np.maximum(w, 1e-12)[..., None], out)
    for img, wl in reversed(levels[:-1]):
        h, ww = wl.shape
        up = np.repeat(np.repeat(out, 2, axis=0), 2, axis=1)[:h, :ww]
        filled = wl[..., None] > 0
        out = np.where(filled, img / np.maximum(wl, 1e-12)[..., None], up)
    return out


def inpaint_image(image, mask, *, max_iters: int = 4000, tol: float = 1e-7):
    """Fill the mask's 0-region by diffusion from the surrounding pixels.

    Pixels with mask = 1 are returned bit-exactly; filled values are convex
    combinations of existing ones, so the output stays inside [0,1].
    """
    image = np.asarray(image)
    mask = np.asarray(mask)
    if image.shape[:2] != mask.shape:
        raise ValueError(f"inpaint_image: mask shape {mask.shape} does not "
                         f"match image {image.shape[:2]}")
    keep = mask != 0
    if not keep.any():
        raise ValueError("inpaint_image: mask removes every pixel")
    if keep.all():
        return image.copy()

    work = _pull_push(image.astype(np.float64), keep)
    work[keep] = image[keep]
    hole = ~keep
    # Jacobi relaxation toward the discrete harmonic fill inside the hole
    for _ in range(max_iters):
        padded = np.pad(work, ((1, 1), (1, 1), (0, 0)), mode="edge")
        avg = 0.25 * (padded[:-2, 1:-1] + padded[2:, 1:-1] +
                      padded[1:-1, :-2] + padded[1:-1, 2:])
        delta = np.max(np.abs(avg[hole] - work[hole])) if hole.any() else 0.0
        work[hole] = avg[hole]
        if delta < tol:
            break
    out = np.asarray(image).copy()
    out[hole] = work[hole].astype(out.dtype)
    return out


# ---------------------------------------------------------------------------
# depth completion (tau)


@dataclass
class BilateralGrid:
    """Pixel-to-vertex splat plus vertex adjacency over an occupied 5D grid."""

    splat: sparse.csr_matrix       # (n_pixels, n_vertices), one 1 per row
    adjacency: sparse.csr_matrix   # (n_vertices, n_vertices), symmetric 0/1
    n_vertices: int
    shape: tuple                   # (h, w)

    @classmethod
    def build(cls, guide, *, luma_bins: int = 8, chroma_bins: int = 8,
              spatial_bin: int = 4) -> "BilateralGrid":
        guide = np.asarray(guide, dtype=np.float64)
        h, w = guide.shape[:2]
        r, g, b = guide[..., 0], guide[..., 1], guide[..., 2]
        y = 0.299 * r + 0.587 * g + 0.114 * b
        u = 0.5 + 0.5 * (b - y)
        v = 0.5 + 0.5 * (r - y)
        yy, xx = np.mgrid[0:h, 0:w]
        coords = np.stack([
            np.clip((y * luma_bins).astype(np.int64), 0, luma_bins - 1).ravel(),
            np.clip((u * chroma_bins).astype(np.int64), 0, chroma_bins - 1).ravel(),
            np.clip((v * chroma_bins).astype(np.int64), 0, chroma_bins - 1).ravel(),
            (xx.ravel() // spatial_bin),
            (yy.ravel() // spatial_bin),
        ], axis=1)
        uniq, inv = np.unique(coords, axis=0, return_inverse=True)
        n_vert = len(uniq)
        n_pix = h * w
        splat = sparse.csr_matrix(
            (np.ones(n_pix), (np.arange(n_pix), inv)), shape=(n_pix, n_vert))

        index = {tuple(c): i for i, c in enumerate(uniq)}
        rows, cols = [], []
        for dim in range(5):
            shifted = uniq.copy()
            shifted[:, dim] += 1
            for i, c in enumerate(shifted):
                j = index.get(tuple(c))
                if j is not None:
                    rows += [i, j]
                    cols += [j, i]
        adjacency = sparse.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(n_vert, n_vert))
        return cls(splat, adjacency, n_vert, (h, w))

    def laplacian(self) -> sparse.csr_matrix:
        deg = np.asarray(self.adjacency.sum(axis=1)).ravel()
        return sparse.diags(deg) - self.adjacency


def _pcg(A, b, x0, *, tol: float, max_iters: int):
    """Jacobi-preconditioned conjugate gradients on an SPD sparse matrix."""
    diag = A.diagonal()
    minv = 1.0 / np.where(diag > 0, diag, 1.0)
    x = x0.copy()
    r = b - A @ x
    z = minv * r
    p = z.copy()
    rz = r @ z
    bnorm = np.linalg.norm(b)
    target = tol * bnorm if bnorm > 0 else tol
    for _ in range(max_iters):
        if np.linalg.norm(r) <= target:
            break
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, float(np.linalg.norm(r))


def assemble_normal_equations(grid: BilateralGrid, target, confidence, lam: float):
    """The (A, b) of the bilateral-space quadratic; shared by solver and any
    direct-solve oracle."""
    t = np.asarray(target, dtype=np.float64).ravel()
    c = np.asarray(confidence, dtype=np.float64).ravel()
    S = grid.splat
    A = (S.T @ sparse.diags(c) @ S) + lam * grid.laplacian() \
        + EPS_REG * sparse.identity(grid.n_vertices)
    b = S.T @ (c * t)
    return A.tocsr(), b


def solve_bilateral(target, confidence, guide, *, lam: float = 4.0,
                    luma_bins: int = 8, chroma_bins: int = 8, spatial_bin: int = 4,
                    cg_tol: float = 1e-6, cg_max_iters: int = 500):
    """Full bilateral-space solve sliced back to pixels.

    Returns (solution (h,w), residual_norm). The residual satisfies
    ||r|| <= cg_tol * ||b|| unless the iteration cap was hit.
    """
    grid = BilateralGrid.build(guide, luma_bins=luma_bins, chroma_bins=chroma_bins,
                               spatial_bin=spatial_bin)
    A, b = assemble_normal_equations(grid, target, confidence, lam)
    c = np.asarray(confidence, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    sc = grid.splat.T @ c
    st = grid.splat.T @ (c * t)
    x0 = np.where(sc > 0, st / np.maximum(sc, 1e-12), 0.0)
    x, residual = _pcg(A, b, x0, tol=cg_tol, max_iters=cg_max_iters)
    out = (grid.splat @ x).reshape(grid.shape)
    return out, residual


def complete_depth(depth, mask, guide, **solver_kwargs):
    """Fill the mask's 0-region of a depth image, guided by color edges.

    Confidence is 0 inside the mask and 1 outside; values outside the mask are
    copied from the input, so only the hole is synthesized.
    """
    depth = np.asarray(depth)
    mask = np.asarray(mask)
    if depth.shape != mask.shape:
        raise ValueError(f"complete_depth: mask shape {mask.shape} does not "
                         f"match depth {depth.shape}")
    if np.asarray(guide).shape[:2] != depth.shape:
        raise ValueError("complete_depth: guide resolution mismatch")
    keep = mask != 0
    if not keep.any():
        raise ValueError("complete_depth: mask covers the whole image")
    if keep.all():
        return depth.copy()
    solution, _ = solve_bilateral(depth, keep.astype(np.float64), guide, **solver_kwargs)
    out = depth.copy()
    out[~keep] = solution[~keep].astype(depth.dtype)
    return out


# ---------------------------------------------------------------------------
# per-view guidance assembly


def render_trajectory(field: RadianceField, poses, level: str = "fine") -> PosedImageSet:
    """Deterministic evaluation renders (image + depth) along a pose list."""
    views = [PosedView(p, *render_view(field, p, level=level)) for p in poses]
    return PosedImageSet(views, {"variant": "render"})


def build_guidance(field: RadianceField, trajectory, user_view_index: int,
                   user_mask, *, transfer_kwargs=None, solver_kwargs=None,
                   out_dir=None, initial: PosedImageSet | None = None):
    """Render the trajectory, transfer the user mask to every view, and fill
    each view's color and depth inside its mask.

    Returns (guidance, initial): per-view guiding image/depth/mask, and the
    raw renders they were derived from. The user view keeps the user-drawn
    mask itself. Pass ``initial`` to reuse existing renders.
    """
    user_mask = np.asarray(user_mask, dtype=np.uint8)
    if not 0 <= user_view_index < len(trajectory):
        raise IndexError(f"user view index {user_view_index} outside trajectory "
                         f"of {len(trajectory)} poses")
    w, h = trajectory[user_view_index].resolution
    if user_mask.shape != (h, w):
        raise ValueError(f"user mask shape {user_mask.shape} does not match "
                         f"render resolution {(h, w)}")
    transfer_kwargs = transfer_kwargs or {}
    solver_kwargs = solver_kwargs or {}

    if initial is None:
        initial = render_trajectory(field, trajectory)
    user_depth = initial[user_view_index].depth

    guided = []
    for s, view in enumerate(initial.views):
        if s == user_view_index:
            mask = user_mask.copy()
        else:
            mask, degenerate = transfer_mask(
                user_mask, trajectory[user_view_index], user_depth,
                view.pose, view.depth, **transfer_kwargs)
            if degenerate:
                raise RuntimeError(f"degenerate mask transfer into view {s}")
        try:
            img_g = inpaint_image(view.image, mask)
            dep_g = complete_depth(view.depth, mask, img_g, **solver_kwargs)
        except ValueError as e:
            raise ValueError(f"guidance failed for view {s}: {e}") from e
        guided.append(PosedView(view.pose, img_g, dep_g, mask))

    guidance = PosedImageSet(guided, {"variant": "guidance",
                                      "user_view_index": user_view_index})
    if out_dir is not None:
        from .datasets import save_dataset
        out_dir = Path(out_dir)
        save_dataset(guidance, out_dir / "guidance")
        save_dataset(initial, out_dir / "initial")
    return guidance, initial
