"""Leave-one-out per-view optimization, harmonization, and Adam machinery."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import camselect, splat
from .errors import InvalidInputError, OptimizationError
from .renderer import (
    LinearHead,
    RenderOptions,
    linear_head_backward,
    render_novel,
)
from .scene import Scene

__all__ = [
    "OptimConfig",
    "AdamState",
    "adam_update",
    "LeaveOneOutOptimizer",
    "loo_step",
    "harmonize",
    "renormalize_normals",
    "write_loss_trace",
]


@dataclass
class OptimConfig:
    iterations: int = 200
    patch_size: int = 150
    lr_head: float = 1e-4
    lr_normal: float = 1e-4
    lr_depth: float = 1e-4
    lr_features: float = 1e-3
    lr_uncertainty: float = 1e-2
    lr_color: float = 1e-3
    lr_mu: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    k_pool: int = 13  # selection pool size
    k_use: int = 9  # views drawn from the pool per iteration
    samples: int = 1  # depth-test quadrature samples
    lambda_mu: float = 0.2
    photo_pairs: int = 2  # random view pairs per harmonization iteration
    harmonize_colors: bool = False
    seed: int = 0

    def __post_init__(self):
        rates = (self.lr_head, self.lr_normal, self.lr_depth, self.lr_features,
                 self.lr_uncertainty, self.lr_color, self.lr_mu)
        if any(r < 0 for r in rates):
            raise InvalidInputError("learning rates must be >= 0")
        if self.patch_size < 16:
            raise InvalidInputError("patch size must be >= 16")
        if self.k_use > self.k_pool:
            raise InvalidInputError("k_use must not exceed k_pool")


@dataclass
class AdamState:
    """First/second moment buffers and step counter for one parameter."""

    m: np.ndarray | float = 0.0
    v: np.ndarray | float = 0.0
    step: int = 0


def adam_update(param, grad, state: AdamState, lr: float,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam step; mutates `state`, returns the new param."""
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise OptimizationError(
            f"non-finite gradient at adam step {state.step + 1}: "
            f"min={np.nanmin(grad)}, max={np.nanmax(grad)}"
        )
    state.step += 1
    state.m = beta1 * np.asarray(state.m) + (1.0 - beta1) * grad
    state.v = beta2 * np.asarray(state.v) + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** state.step)
    v_hat = state.v / (1.0 - beta2 ** state.step)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps)


def renormalize_normals(scene: Scene) -> Scene:
    """Rescale every normal to unit length; zero normals keep (0, 0, 1)."""
    for view in scene.views:
        norms = np.linalg.norm(view.normal, axis=2, keepdims=True)
        safe = norms > 1e-12
        view.normal = np.where(safe, view.normal / np.where(safe, norms, 1.0),
                               np.array([0.0, 0.0, 1.0]))
    return scene


_VIEW_PARAMS = ("color", "depth", "normal", "uncertainty_logit", "feature_logit", "mu")


class LeaveOneOutOptimizer:
    """Holds Adam state and the RNG across leave-one-out iterations."""

    def __init__(self, scene: Scene, config: OptimConfig | None = None,
                 head: LinearHead | None = None):
        self.scene = scene
        self.config = config or OptimConfig()
        self.head = head or LinearHead()
        self.rng = np.random.default_rng(self.config.seed)
        self.states: dict = {}
        self.trace: list = []

    def _state(self, key) -> AdamState:
        return self.states.setdefault(key, AdamState())

    def _adam(self, key, param, grad, lr):
        cfg = self.config
        return adam_update(param, grad, self._state(key), lr,
                           cfg.beta1, cfg.beta2, cfg.adam_eps)

    def _select_sources(self, holdout_id):
        """Greedy pool of k_pool candidates, then k_use drawn uniformly."""
        cfg = self.config
        others = [v for v in self.scene.views if v.id != holdout_id]
        holdout = self.scene.view_by_id(holdout_id)
        pool_k = min(cfg.k_pool, len(others))
        maps = camselect.score_maps(others, holdout.camera)
        pool = camselect.select_cameras(maps, pool_k)
        use = min(cfg.k_use, len(pool))
        chosen = self.rng.choice(len(pool), size=use, replace=False)
        return [pool[i] for i in sorted(chosen)]

    def step(self) -> float:
        """One leave-one-out iteration; returns the L1 loss."""
        cfg = self.config
        scene = self.scene
        if len(scene.views) < 2:
            raise InvalidInputError("leave-one-out needs at least two views")
        holdout = scene.views[int(self.rng.integers(len(scene.views)))]
        sources = self._select_sources(holdout.id)

        cam = holdout.camera
        ph = min(cfg.patch_size, cam.height)
        pw = min(cfg.patch_size, cam.width)
        render = None
        for _ in range(10):
            r0 = int(self.rng.integers(cam.height - ph + 1))
            c0 = int(self.rng.integers(cam.width - pw + 1))
            patch_cam = cam.with_crop(r0, c0, ph, pw)
            render = render_novel(
                scene, patch_cam, (ph, pw),
                RenderOptions(view_ids=sources, samples=cfg.samples, retain=True),
                head=self.head,
            )
            if render.validity.any():
                break
        else:
            return float("nan")  # skip: no patch with coverage found

        target = holdout.mu * holdout.color[r0:r0 + ph, c0:c0 + pw]
        valid = render.validity
        nvalid = int(np.count_nonzero(valid))
        resid = render.color - target
        loss = float(np.abs(resid[valid]).mean())
        if not np.isfinite(loss):
            raise OptimizationError(f"non-finite loss at iteration {len(self.trace)}")

        denom = nvalid * 3
        d_color_out = np.where(valid[:, :, None], np.sign(resid), 0.0) / denom
        clamp_open = (render.raw >= 0.0) & (render.raw <= 1.0)
        d_raw = d_color_out * clamp_open

        d_matrix, d_bias, d_pooled = linear_head_backward(self.head, render.pooled, d_raw)

        wsum = render.weight_sum
        grads = {}
        for vid in sources:
            raster = render.rasters[vid]
            w = render.per_view_weights[vid]
            share = np.where(wsum > 0, w / np.where(wsum > 0, wsum, 1.0), 0.0)
            up = d_pooled * share[:, :, None]
            d_pay, d_alpha = splat.composite_backward(raster, up)
            grads[vid] = splat.attribute_backward(
                scene.view_by_id(vid), patch_cam, raster, d_pay, d_alpha
            )
        d_mu_holdout = float(
            -np.sum(np.sign(resid[valid]) * holdout.color[r0:r0 + ph, c0:c0 + pw][valid])
            / denom
        )

        # apply updates
        self.head.matrix = self._adam(("head", "matrix"), self.head.matrix,
                                      d_matrix, cfg.lr_head)
        self.head.bias = self._adam(("head", "bias"), self.head.bias,
                                    d_bias, cfg.lr_head)
        lrs = {
            "color": cfg.lr_color,
            "depth": cfg.lr_depth,
            "normal": cfg.lr_normal,
            "uncertainty_logit": cfg.lr_uncertainty,
            "feature_logit": cfg.lr_features,
            "mu": cfg.lr_mu,
        }
        for vid, g in grads.items():
            view = scene.view_by_id(vid)
            view.color = self._adam((vid, "color"), view.color, g.color, lrs["color"])
            view.depth = self._adam((vid, "depth"), view.depth, g.depth, lrs["depth"])
            view.normal = self._adam((vid, "normal"), view.normal, g.normal,
                                     lrs["normal"])
            view.uncertainty_logit = self._adam(
                (vid, "uncertainty_logit"), view.uncertainty_logit,
                g.uncertainty_logit, lrs["uncertainty_logit"])
            view.feature_logit = self._adam(
                (vid, "feature_logit"), view.feature_logit,
                g.feature_logit, lrs["feature_logit"])
            view.mu = float(self._adam((vid, "mu"), view.mu, g.mu, lrs["mu"]))
        holdout.mu = float(self._adam((holdout.id, "mu"), holdout.mu,
                                      d_mu_holdout, lrs["mu"]))
        renormalize_normals(scene)

        self.trace.append({"iteration": len(self.trace), "loss": loss,
                           "holdout": holdout.id})
        return loss

    def run(self, iterations: int | None = None):
        n = self.config.iterations if iterations is None else iterations
        return [self.step() for _ in range(n)]


def loo_step(scene: Scene, head: LinearHead, config: OptimConfig, rng=None) -> float:
    """Single leave-one-out step with fresh Adam state (testing helper)."""
    opt = LeaveOneOutOptimizer(scene, config, head)
    if rng is not None:
        opt.rng = rng
    return opt.step()


# ---------------------------------------------------------------------------
# Harmonization


def _pair_reprojection(scene, src_id, dst_cam):
    """View `src` splatted alone into `dst`'s frame, with its mu divided out.

    Returns (color map normalized by accumulated alpha, coverage mask).
    """
    src = scene.view_by_id(src_id)
    raster = splat.rasterize_view(src, dst_cam, retain=False)
    mask = raster.alpha > 0.99
    denom = np.where(mask, raster.alpha, 1.0)
    mu = src.mu if src.mu > 1e-9 else 1.0
    color = raster.payload[:, :, :3] / (denom[:, :, None] * mu)
    return color, mask


def _holdout_cache(scene, target_id, samples):
    """Per-source share and raw-color maps for rendering `target` from the rest.

    The composite is linear in each source's payload, and alphas do not
    depend on mu, so mu can be factored out and iterated over cheaply.
    """
    target = scene.view_by_id(target_id)
    others = [v.id for v in scene.views if v.id != target_id]
    render = render_novel(
        scene, target.camera, None,
        RenderOptions(view_ids=others, samples=samples, retain=True),
    )
    wsum = render.weight_sum
    shares = {}
    chats = {}
    for vid in others:
        w = render.per_view_weights[vid]
        shares[vid] = np.where(wsum > 0, w / np.where(wsum > 0, wsum, 1.0), 0.0)
        view = scene.view_by_id(vid)
        mu = view.mu if view.mu > 1e-9 else 1.0
        chats[vid] = render.rasters[vid].payload[:, :, :3] / mu
    return shares, chats, render.validity


def harmonize(scene: Scene, config: OptimConfig | None = None,
              iterations: int | None = None):
    """Optimize per-view exposure coefficients mu.

    Minimizes the leave-one-out L1 term plus the regularizer
    L_mu = lambda * sum (mu_i - 1)^2 / N and the pairwise photometric
    consistency loss L_photo = sum (M * mu_n I_n - R(I_m))^2, where R
    reprojects view m into view n's frame. Returns (mu array ordered as
    scene.views, loss trace rows).
    """
    config = config or OptimConfig()
    if len(scene.views) < 2:
        raise InvalidInputError("harmonization needs at least two views")
    n_iter = config.iterations if iterations is None else iterations
    rng = np.random.default_rng(config.seed)
    ids = [v.id for v in scene.views]
    n = len(ids)
    idx = {vid: i for i, vid in enumerate(ids)}
    mu = np.array([v.mu for v in scene.views], dtype=np.float64)

    def build_caches():
        hc = {vid: _holdout_cache(scene, vid, config.samples) for vid in ids}
        pc = {}
        for dst in ids:
            cam = scene.view_by_id(dst).camera
            for src in ids:
                if src != dst:
                    pc[(src, dst)] = _pair_reprojection(scene, src, cam)
        return hc, pc

    holdout_caches, pair_caches = build_caches()
    lam = config.lambda_mu
    state = AdamState()
    trace = []
    pairs = [(s, d) for s in ids for d in ids if s != d]

    for it in range(n_iter):
        if config.harmonize_colors and it > 0 and it % 50 == 0:
            holdout_caches, pair_caches = build_caches()
        grad = np.zeros(n)

        # leave-one-out L1 term
        hid = ids[int(rng.integers(n))]
        shares, chats, validity = holdout_caches[hid]
        target_view = scene.view_by_id(hid)
        rendered = np.zeros(target_view.color.shape)
        for vid in shares:
            rendered += shares[vid][:, :, None] * (mu[idx[vid]] * chats[vid])
        resid = rendered - mu[idx[hid]] * target_view.color
        nvalid = max(int(np.count_nonzero(validity)), 1)
        l1 = float(np.abs(resid[validity]).mean()) if validity.any() else 0.0
        sgn = np.where(validity[:, :, None], np.sign(resid), 0.0) / (nvalid * 3)
        for vid in shares:
            grad[idx[vid]] += float(np.sum(sgn * shares[vid][:, :, None] * chats[vid]))
        grad[idx[hid]] += float(-np.sum(sgn * target_view.color))

        # photometric pairs
        l_photo = 0.0
        n_pairs = min(config.photo_pairs, len(pairs))
        for pi in rng.choice(len(pairs), size=n_pairs, replace=False):
            src, dst = pairs[pi]
            rhat, mask = pair_caches[(src, dst)]
            dst_view = scene.view_by_id(dst)
            diff = np.where(mask[:, :, None],
                            mu[idx[dst]] * dst_view.color - mu[idx[src]] * rhat, 0.0)
            l_photo += float(np.sum(diff * diff))
            grad[idx[dst]] += float(2.0 * np.sum(diff * dst_view.color))
            grad[idx[src]] += float(-2.0 * np.sum(diff * rhat))

        # regularizer toward mu = 1
        l_mu = lam * float(np.sum((mu - 1.0) ** 2)) / n
        grad += 2.0 * lam * (mu - 1.0) / n

        mu = adam_update(mu, grad, state, config.lr_mu,
                         config.beta1, config.beta2, config.adam_eps)
        mu = np.maximum(mu, 0.0)
        trace.append({"iteration": it, "loss": l1 + l_mu + l_photo,
                      "l1": l1, "l_mu": l_mu, "l_photo": l_photo})

    for view, m in zip(scene.views, mu):
        view.mu = float(m)
    return mu, trace


def write_loss_trace(path, rows):
    """Loss trace rows (dicts) as CSV with a header from the first row."""
    if not rows:
        return
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
