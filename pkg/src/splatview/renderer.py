"""Novel-view synthesis: per-view rasters pooled by w_CS * w_TS * w_PD.

The pooled 9-channel payload goes through a small learnable linear head
(identity-initialized, so untrained renders equal the pure weighted color
blend) and is clamped to [0, 1] at image assembly.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import camselect, depthtest, splat
from .errors import InvalidInputError
from .scene import CameraModel, Scene

__all__ = [
    "LinearHead",
    "RenderOptions",
    "NovelRender",
    "texture_stretch_weight",
    "apply_linear_head",
    "linear_head_backward",
    "render_novel",
    "worker_count",
]


def worker_count() -> int:
    """Thread cap from SPLATVIEW_THREADS (0 or unset = auto)."""
    raw = os.environ.get("SPLATVIEW_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return max(1, n)


@dataclass
class LinearHead:
    """3x9 linear map from pooled payload to color."""

    matrix: np.ndarray = field(
        default_factory=lambda: np.concatenate([np.eye(3), np.zeros((3, 6))], axis=1)
    )
    bias: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64).reshape(3, 9)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(3)
        if not (np.isfinite(self.matrix).all() and np.isfinite(self.bias).all()):
            raise InvalidInputError("head parameters must be finite")

    def is_identity(self) -> bool:
        ident = np.concatenate([np.eye(3), np.zeros((3, 6))], axis=1)
        return np.array_equal(self.matrix, ident) and not self.bias.any()


def apply_linear_head(head: LinearHead, pooled: np.ndarray) -> np.ndarray:
    """matrix @ pooled + bias over (..., 9) payloads, unclamped."""
    pooled = np.asarray(pooled, dtype=np.float64)
    return pooled @ head.matrix.T + head.bias


def linear_head_backward(head: LinearHead, pooled: np.ndarray, upstream: np.ndarray):
    """Gradients (d_matrix, d_bias, d_pooled) for (..., 3) upstream."""
    pooled = pooled.reshape(-1, 9)
    up = upstream.reshape(-1, 3)
    d_matrix = up.T @ pooled
    d_bias = up.sum(axis=0)
    d_pooled = up @ head.matrix
    return d_matrix, d_bias, d_pooled.reshape(upstream.shape[:-1] + (9,))


def texture_stretch_weight(cov: np.ndarray) -> float:
    """Eigenvalue ratio lambda_min / lambda_max of an SPD 2x2 covariance."""
    cov = np.asarray(cov, dtype=np.float64).reshape(2, 2)
    if abs(cov[0, 1] - cov[1, 0]) > 1e-9:
        raise InvalidInputError("covariance must be symmetric")
    tr = cov[0, 0] + cov[1, 1]
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    if det <= 0 or tr <= 0:
        raise InvalidInputError("covariance must be positive definite")
    return float(splat.eig_ratio_batch(cov[None])[0])


@dataclass
class RenderOptions:
    k: int = 9
    fast: bool = False
    samples: int = 1  # depth-test quadrature samples
    layers: int = 10
    kd: int = splat.KD_DEFAULT
    cutoffs: bool = True
    sigma: float | None = None  # None = scene default
    downscale: int = 8
    score_mode: str = "binary"
    epsilon: float = 0.05
    retain: bool = False  # keep fragments for the backward pass
    view_ids: list | None = None  # bypass camera selection


@dataclass
class NovelRender:
    color: np.ndarray  # (H, W, 3) clamped
    validity: np.ndarray  # (H, W) bool
    per_view_weights: dict  # view id -> (H, W) combined weight map
    pooled: np.ndarray  # (H, W, 9) unclamped pooled payload
    raw: np.ndarray  # (H, W, 3) head output before clamping
    selected: list
    stats: dict
    rasters: dict = field(default_factory=dict)  # view id -> ViewRaster (if retained)
    weight_sum: np.ndarray | None = None


def _mixture_arrays_full(rasters, height, width):
    """Padded (V, P, C) mixture arrays from full-resolution fragment lists."""
    npix = height * width
    nviews = len(rasters)
    counts = np.zeros((nviews, npix), dtype=np.int64)
    per_view = []
    for vi, r in enumerate(rasters):
        inc = r.frag_included
        pix = r.frag_pix[inc]
        alpha = r.frag_alpha[inc]
        depth = r.splats.cam_depth[r.frag_splat[inc]]
        np.add.at(counts[vi], pix, 1)
        per_view.append((pix, alpha, depth))
    cmax = max(1, int(counts.max()) if counts.size else 1)
    depths = np.zeros((nviews, npix, cmax))
    betas = np.zeros((nviews, npix, cmax))
    beta_inf = np.ones((nviews, npix))
    for vi, (pix, alpha, depth) in enumerate(per_view):
        if len(pix) == 0:
            continue
        # fragments arrive pixel-major and depth-sorted
        seg_id, seg_start = splat._segment_ids(pix)
        slot = np.arange(len(pix)) - seg_start[seg_id]
        trans = np.ones(npix)
        beta = np.empty(len(pix))
        # beta_i = alpha_i * prod_{j<i}(1 - alpha_j), sequential per pixel rank
        max_slot = int(slot.max())
        for s in range(max_slot + 1):
            sel = slot == s
            p = pix[sel]
            beta[sel] = alpha[sel] * trans[p]
            trans[p] = trans[p] * (1.0 - alpha[sel])
        depths[vi, pix, slot] = depth
        betas[vi, pix, slot] = beta
        beta_inf[vi] = trans
    return depths, betas, beta_inf


def _mixture_arrays_layered(layered):
    nviews = len(layered)
    h, w, layers = layered[0].bin_depth.shape
    npix = h * w
    depths = np.stack([r.bin_depth.reshape(npix, layers) for r in layered])
    betas = np.stack([r.bin_beta.reshape(npix, layers) for r in layered])
    beta_inf = np.stack([r.transmittance.reshape(npix) for r in layered])
    # empty bins carry depth 0 with beta 0; mask them out explicitly
    betas = np.where(depths > 0, betas, 0.0)
    return depths, betas, beta_inf


def render_novel(
    scene: Scene,
    novel_cam: CameraModel,
    size: tuple[int, int] | None = None,
    options: RenderOptions | None = None,
    head: LinearHead | None = None,
    state: camselect.SelectionState | None = None,
) -> NovelRender:
    """Synthesize a novel view.

    Pipeline: camera selection, per-view rasterization (full or layered),
    probabilistic depth test, weighted-average pooling with
    w = w_CS * w_TS * w_PD, linear head, clamp. Pixels with zero total
    weight show the scene background and are flagged invalid.
    """
    t0 = time.perf_counter()
    options = options or RenderOptions()
    head = head or LinearHead()
    height, width = size if size is not None else (novel_cam.height, novel_cam.width)
    npix = height * width

    if options.view_ids is not None:
        selected = list(options.view_ids)
        if not selected:
            raise InvalidInputError("explicit view selection is empty")
    else:
        k = min(options.k, len(scene.views))
        maps = camselect.score_maps(
            scene.views, novel_cam, options.downscale, options.score_mode
        )
        selected = camselect.select_cameras(maps, k, options.epsilon)
    views = [scene.view_by_id(vid) for vid in selected]

    # constant per-view camera-selection weight
    if state is not None:
        camselect.update_temporal_weights(
            state, {v.id: (1.0 if v.id in selected else 0.0) for v in scene.views},
            n_keep=max(len(selected), len(state.selected) or len(selected)),
        )
        sel_now = [vid for vid in state.selected if vid in selected] or selected
        w_cs_vec = camselect.smooth_normalize(
            np.array([state.weights.get(vid, 0.0) for vid in sel_now])
        )
        w_cs = {vid: w for vid, w in zip(sel_now, w_cs_vec)}
        views = [scene.view_by_id(vid) for vid in sel_now]
        selected = sel_now
    else:
        w_cs = {v.id: 1.0 / len(views) for v in views}

    sigma = options.sigma if options.sigma is not None else scene.resolve_sigma()

    if options.fast:
        rasters = splat.layered_composite(
            views, novel_cam, (height, width), options.layers
        )
        depths, betas, beta_inf = _mixture_arrays_layered(rasters)
    else:
        nw = worker_count()
        def _rast(v):
            return splat.rasterize_view(
                v, novel_cam, (height, width),
                kd=options.kd, cutoffs=options.cutoffs, retain=True,
            )
        if nw > 1 and len(views) > 1:
            with ThreadPoolExecutor(max_workers=nw) as pool:
                rasters = list(pool.map(_rast, views))
        else:
            rasters = [_rast(v) for v in views]
        depths, betas, beta_inf = _mixture_arrays_full(rasters, height, width)

    w_pd = depthtest.prob_front_batch(depths, betas, beta_inf, sigma, options.samples)

    alpha = np.stack([r.alpha.reshape(npix) for r in rasters])
    stretch_num = np.stack([r.stretch_num.reshape(npix) for r in rasters])
    w_ts = np.where(alpha > 0, stretch_num / np.where(alpha > 0, alpha, 1.0), 0.0)
    w_cs_arr = np.array([w_cs[r.view_id] for r in rasters])[:, None]
    weights = w_cs_arr * w_ts * w_pd  # (V, P)

    payloads = np.stack([r.payload.reshape(npix, 9) for r in rasters])
    wsum = weights.sum(axis=0)
    covered = wsum > 0
    pooled = np.zeros((npix, 9))
    if covered.any():
        pooled[covered] = (
            np.einsum("vp,vpc->pc", weights[:, covered], payloads[:, covered])
            / wsum[covered, None]
        )

    raw = apply_linear_head(head, pooled)
    color = np.clip(raw, 0.0, 1.0)
    color[~covered] = scene.background_color

    skips_grazing = sum(r.splats.skipped_grazing for r in rasters if hasattr(r, "splats"))
    skips_behind = sum(r.splats.skipped_behind for r in rasters if hasattr(r, "splats"))
    millis = (time.perf_counter() - t0) * 1000.0
    render = NovelRender(
        color=color.reshape(height, width, 3),
        validity=covered.reshape(height, width),
        per_view_weights={
            r.view_id: weights[i].reshape(height, width) for i, r in enumerate(rasters)
        },
        pooled=pooled.reshape(height, width, 9),
        raw=raw.reshape(height, width, 3),
        selected=selected,
        stats={
            "skipped_grazing": skips_grazing,
            "skipped_behind": skips_behind,
            "selected": selected,
            "millis": millis,
            "sigma": sigma,
        },
        weight_sum=wsum.reshape(height, width),
    )
    if options.retain and not options.fast:
        render.rasters = {r.view_id: r for r in rasters}
    return render
