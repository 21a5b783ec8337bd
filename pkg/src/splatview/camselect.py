"""Greedy maximum-coverage camera selection and temporal weight smoothing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .scene import CameraModel, InputView

__all__ = [
    "ScoreMap",
    "SelectionState",
    "score_map",
    "score_maps",
    "select_cameras",
    "update_temporal_weights",
    "smooth_normalize",
]

OCCLUSION_TAU = 0.02  # relative depth tolerance for the visibility test


@dataclass
class ScoreMap:
    """Downscaled per-cell score of one input view in the novel frame."""

    view_id: int
    grid: np.ndarray  # (h, w) scores >= 0


@dataclass
class SelectionState:
    """Temporally smoothed per-view weights plus the current selection."""

    weights: dict = field(default_factory=dict)  # view id -> w in [0, 1]
    selected: list = field(default_factory=list)
    lam: float = 0.05


def _novel_depth_raster(views, novel_cam: CameraModel, downscale: int):
    """Nearest-depth point raster of the union cloud at low resolution.

    Returns (point_world (cells, 3), point_depth (cells,), covered mask)
    where each covered cell keeps the closest lifted point it sees.
    """
    lw = max(1, novel_cam.width // downscale)
    lh = max(1, novel_cam.height // downscale)
    low_cam = CameraModel(
        width=lw,
        height=lh,
        fx=novel_cam.fx / downscale,
        fy=novel_cam.fy / downscale,
        cx=novel_cam.cx / downscale,
        cy=novel_cam.cy / downscale,
        rotation=novel_cam.rotation,
        translation=novel_cam.translation,
    )
    pts_all = []
    for v in views:
        rows, cols = np.nonzero(v.valid)
        pix = np.stack([cols.astype(np.float64), rows.astype(np.float64)], axis=1)
        pts_all.append(v.camera.lift_many(pix, v.depth[rows, cols]))
    pts = np.concatenate(pts_all, axis=0) if pts_all else np.zeros((0, 3))
    pix, z, ok = low_cam.project_many(pts)
    pix = np.where(np.isfinite(pix), pix, -1.0)  # behind-camera points are not ok
    u = np.round(pix[:, 0]).astype(np.int64)
    v_ = np.round(pix[:, 1]).astype(np.int64)
    ok &= (u >= 0) & (u < lw) & (v_ >= 0) & (v_ < lh)
    ncells = lh * lw
    best = np.full(ncells, np.inf)
    lin = v_[ok] * lw + u[ok]
    np.minimum.at(best, lin, z[ok])
    # recover the winning point per cell via a (cell, depth) sort
    win_pts = np.zeros((ncells, 3))
    if lin.size:
        order = np.lexsort((z[ok], lin))
        lin_s = lin[order]
        first = np.r_[True, lin_s[1:] != lin_s[:-1]]
        win_pts[lin_s[first]] = pts[ok][order][first]
    covered = np.isfinite(best)
    return win_pts, np.where(covered, best, 0.0), covered, (lh, lw)


def score_map(
    view: InputView,
    novel_cam: CameraModel,
    downscale: int = 8,
    mode: str = "binary",
    *,
    _raster=None,
    all_views=None,
) -> ScoreMap:
    """Visibility score of one view over the novel frame's low-res cells.

    A cell scores nonzero iff the surface point it sees from the novel
    pose also reprojects into `view` at a consistent depth (relative
    tolerance tau). Binary mode scores 1; distance-ratio mode scores
    min(d_input, d_novel) / max(d_input, d_novel).
    """
    if downscale < 1:
        raise InvalidInputError("downscale must be >= 1")
    if mode not in ("binary", "distance-ratio"):
        raise InvalidInputError(f"unknown score mode {mode!r}")
    if _raster is None:
        _raster = _novel_depth_raster(all_views or [view], novel_cam, downscale)
    win_pts, novel_depth, covered, (lh, lw) = _raster

    grid = np.zeros(lh * lw)
    idx = np.flatnonzero(covered)
    if idx.size:
        pts = win_pts[idx]
        pix, z_in, ok = view.camera.project_many(pts)
        u = np.round(pix[:, 0]).astype(np.int64)
        v_ = np.round(pix[:, 1]).astype(np.int64)
        inb = ok & (u >= 0) & (u < view.camera.width) & (v_ >= 0) & (v_ < view.camera.height)
        u, v_ = np.clip(u, 0, view.camera.width - 1), np.clip(v_, 0, view.camera.height - 1)
        stored = view.depth[v_, u]
        valid = view.valid[v_, u]
        vis = inb & valid & (np.abs(stored - z_in) < OCCLUSION_TAU * z_in)
        if mode == "binary":
            score = np.where(vis, 1.0, 0.0)
        else:
            d_n = novel_depth[idx]
            ratio = np.minimum(z_in, d_n) / np.maximum(z_in, d_n)
            score = np.where(vis, ratio, 0.0)
        grid[idx] = score
    return ScoreMap(view_id=view.id, grid=grid.reshape(lh, lw))


def score_maps(views, novel_cam, downscale: int = 8, mode: str = "binary"):
    """Score maps for all views against one novel pose (shared raster)."""
    raster = _novel_depth_raster(views, novel_cam, downscale)
    return [
        score_map(v, novel_cam, downscale, mode, _raster=raster) for v in views
    ]


def select_cameras(maps, k: int, epsilon: float = 0.05):
    """Greedy maximum-coverage selection of k views.

    Each pick maximizes the increase of sum_p max_selected S_i(p). When a
    pick's marginal gain drops below epsilon times the previous pick's
    gain, the degenerate fallback fires and this and all subsequent picks
    use the absolute criterion argmax sum_p S_i(p). Ties break toward the
    lower view id.
    """
    if k < 1 or k > len(maps):
        raise InvalidInputError(f"k={k} out of range for {len(maps)} views")
    maps = sorted(maps, key=lambda m: m.view_id)
    ids = [m.view_id for m in maps]
    grids = np.stack([m.grid.ravel() for m in maps])
    totals = grids.sum(axis=1)

    selected: list[int] = []
    chosen = np.zeros(len(maps), dtype=bool)
    current = np.zeros(grids.shape[1])
    prev_gain = None
    fallback = False
    for _ in range(k):
        remaining = np.flatnonzero(~chosen)
        gains = np.array(
            [np.maximum(current, grids[i]).sum() - current.sum() for i in remaining]
        )
        if not fallback and prev_gain is not None:
            best_gain = gains.max()
            if prev_gain <= 0 or best_gain / prev_gain < epsilon:
                fallback = True
        if fallback:
            pick = remaining[int(np.argmax(totals[remaining]))]
        else:
            pick = remaining[int(np.argmax(gains))]
            prev_gain = float(gains[list(remaining).index(pick)])
        chosen[pick] = True
        selected.append(ids[pick])
        current = np.maximum(current, grids[pick])
    return selected


def update_temporal_weights(state: SelectionState, scores: dict, n_keep: int = 9):
    """One temporal filtering step: w_t = lam*s + (1-lam)*w_{t-1}.

    `scores` maps view id -> score in {0, 1}; afterwards the n_keep
    highest-weight views become the selection.
    """
    lam = state.lam
    if not 0.0 < lam <= 1.0:
        raise InvalidInputError("lambda must be in (0, 1]")
    for vid, s in scores.items():
        prev = state.weights.get(vid, 0.0)
        state.weights[vid] = lam * s + (1.0 - lam) * prev
    ranked = sorted(state.weights.items(), key=lambda kv: (-kv[1], kv[0]))
    state.selected = [vid for vid, _ in ranked[:n_keep]]
    return state


def smooth_normalize(weights: np.ndarray) -> np.ndarray:
    """Smooth camera-selection weights w_CS over the selected set.

    Subtracting the minimum sends views entering/leaving the set to zero
    weight; an all-equal vector falls back to uniform.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size == 0:
        raise InvalidInputError("empty selection")
    shifted = weights - weights.min()
    denom = shifted.sum()
    if denom < 1e-12:
        return np.full(weights.shape, 1.0 / weights.size)
    return shifted / denom
