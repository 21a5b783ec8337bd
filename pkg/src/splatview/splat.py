"""Bi-directional EWA splatting with per-view alpha compositing.

Every valid pixel of an input view becomes an anisotropic 2D Gaussian in
the novel view. The Gaussian's covariance is built from two local plane
Jacobians: the inverse of the map from the pixel's tangent plane into the
input image, composed with the forward map into the novel view. Per-view
fragments are depth-sorted and composited front to back; the analytic
backward pass and the layered fast-path approximation live here too.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .scene import CameraModel, InputView

__all__ = [
    "SIGMA0",
    "EPS_LP",
    "ALPHA_PEAK",
    "KD_DEFAULT",
    "MIN_TRANSMITTANCE",
    "SplatBatch",
    "ViewRaster",
    "build_splats",
    "splat_covariance",
    "cutoff_radius",
    "rasterize_view",
    "composite_backward",
    "attribute_backward",
    "ParamGrads",
    "layered_composite",
    "LayeredRaster",
    "eig_ratio_batch",
]

SIGMA0 = 0.7  # base splat footprint, pixels
EPS_LP = 0.05  # low-pass covariance floor, pixels^2
ALPHA_PEAK = 0.999
KD_DEFAULT = 150
MIN_TRANSMITTANCE = 1.0 / 255.0  # early-termination threshold
_GRAZING_DET = 1e-12
_MIN_Z = 1e-9


# ---------------------------------------------------------------------------
# Covariance construction


def _tangent_basis(normals: np.ndarray):
    """Orthonormal (e1, e2) spanning the plane orthogonal to each normal."""
    n = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    a = np.zeros_like(n)
    a[np.arange(len(n)), np.argmin(np.abs(n), axis=1)] = 1.0
    e1 = np.cross(n, a)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(n, e1)
    return e1, e2


def _plane_jac(cam: CameraModel, points: np.ndarray, e1: np.ndarray, e2: np.ndarray):
    """Jacobian of (plane coords) -> (image pixels) at each surface point.

    Returns (J (N,2,2), cam_z (N,)).
    """
    y = cam.world_to_cam(points)
    a = e1 @ cam.rotation.T
    b = e2 @ cam.rotation.T
    z = y[:, 2]
    z2 = z * z
    jac = np.empty((len(points), 2, 2))
    jac[:, 0, 0] = cam.fx * (a[:, 0] * z - y[:, 0] * a[:, 2]) / z2
    jac[:, 1, 0] = cam.fy * (a[:, 1] * z - y[:, 1] * a[:, 2]) / z2
    jac[:, 0, 1] = cam.fx * (b[:, 0] * z - y[:, 0] * b[:, 2]) / z2
    jac[:, 1, 1] = cam.fy * (b[:, 1] * z - y[:, 1] * b[:, 2]) / z2
    return jac, z


def _inv2(m: np.ndarray, det: np.ndarray):
    inv = np.empty_like(m)
    inv[:, 0, 0] = m[:, 1, 1]
    inv[:, 1, 1] = m[:, 0, 0]
    inv[:, 0, 1] = -m[:, 0, 1]
    inv[:, 1, 0] = -m[:, 1, 0]
    return inv / det[:, None, None]


def covariance_batch(
    in_cam: CameraModel,
    out_cam: CameraModel,
    pix_uv: np.ndarray,
    depths: np.ndarray,
    normals: np.ndarray,
    uncertainty: np.ndarray,
):
    """Batched bi-directional EWA covariance for N input-view pixels.

    Returns a dict with the screen-space mean in the novel view, the
    covariance (uncertainty-scaled, with the low-pass floor), the combined
    Jacobian M, M M^T, the lifted world points and validity masks.
    """
    pix_uv = np.atleast_2d(np.asarray(pix_uv, dtype=np.float64))
    depths = np.asarray(depths, dtype=np.float64)
    normals = np.atleast_2d(np.asarray(normals, dtype=np.float64))
    uncertainty = np.asarray(uncertainty, dtype=np.float64)
    points = in_cam.lift_many(pix_uv, depths)
    e1, e2 = _tangent_basis(normals)
    j_in, _ = _plane_jac(in_cam, points, e1, e2)
    j_out, _ = _plane_jac(out_cam, points, e1, e2)
    det_in = j_in[:, 0, 0] * j_in[:, 1, 1] - j_in[:, 0, 1] * j_in[:, 1, 0]
    grazing = np.abs(det_in) < _GRAZING_DET
    det_safe = np.where(grazing, 1.0, det_in)
    m = np.einsum("nij,njk->nik", j_out, _inv2(j_in, det_safe))
    mmt = np.einsum("nij,nkj->nik", m, m)
    cov = uncertainty[:, None, None] * (SIGMA0 * SIGMA0) * mmt
    cov[:, 0, 0] += EPS_LP
    cov[:, 1, 1] += EPS_LP
    mean, z, in_front = out_cam.project_many(points)
    return {
        "points": points,
        "mean": mean,
        "cam_depth": z,
        "m": m,
        "mmt": mmt,
        "cov": cov,
        "grazing": grazing,
        "in_front": in_front,
    }


def splat_covariance(view: InputView, pixel, novel_cam: CameraModel):
    """EWA covariance of a single source pixel in the novel view.

    `pixel` is an integer (row, col) into the view's maps. Returns
    (screen_mean, cov, cam_depth), or None when the splat is skipped
    (grazing input geometry or point behind the novel camera).
    """
    row, col = int(pixel[0]), int(pixel[1])
    if not view.valid[row, col]:
        raise InvalidInputError(f"source pixel {(row, col)} has no valid depth")
    out = covariance_batch(
        view.camera,
        novel_cam,
        np.array([[float(col), float(row)]]),
        np.array([view.depth[row, col]]),
        view.normal[row, col][None],
        np.array([np.exp(view.uncertainty_logit[row, col])]),
    )
    if out["grazing"][0] or not out["in_front"][0]:
        return None
    return out["mean"][0], out["cov"][0], float(out["cam_depth"][0])


def eig_ratio_batch(covs: np.ndarray) -> np.ndarray:
    """lambda_min / lambda_max for a batch of symmetric 2x2 matrices."""
    tr = covs[..., 0, 0] + covs[..., 1, 1]
    det = covs[..., 0, 0] * covs[..., 1, 1] - covs[..., 0, 1] * covs[..., 1, 0]
    disc = np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0))
    lmax = 0.5 * (tr + disc)
    lmin = 0.5 * (tr - disc)
    return lmin / lmax


def _eig_max_batch(covs: np.ndarray) -> np.ndarray:
    tr = covs[..., 0, 0] + covs[..., 1, 1]
    det = covs[..., 0, 0] * covs[..., 1, 1] - covs[..., 0, 1] * covs[..., 1, 0]
    disc = np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0))
    return 0.5 * (tr + disc)


def cutoff_radius(covs: np.ndarray) -> int:
    """Cutoff radius in pixels from a batch of splat covariances.

    The top 3% largest eigenvalues (floor(0.03 * count) entries) are
    treated as outliers; r = ceil(3 * sigma_max) over the rest.
    """
    covs = np.asarray(covs, dtype=np.float64).reshape(-1, 2, 2)
    if len(covs) == 0:
        raise InvalidInputError("cutoff_radius needs at least one splat")
    eig = np.sort(_eig_max_batch(covs))
    drop = int(np.floor(0.03 * len(eig)))
    sigma_max = np.sqrt(eig[len(eig) - 1 - drop])
    return int(np.ceil(3.0 * sigma_max))


# ---------------------------------------------------------------------------
# Splat batches


@dataclass
class SplatBatch:
    """All surviving splats of one input view, projected into a novel view."""

    view_id: int
    src_rows: np.ndarray  # (N,)
    src_cols: np.ndarray  # (N,)
    mean: np.ndarray  # (N, 2) novel-view (u, v)
    cov: np.ndarray  # (N, 2, 2)
    cov_inv: np.ndarray  # (N, 2, 2)
    cam_depth: np.ndarray  # (N,)
    payload: np.ndarray  # (N, 9) = (mu*color, sigmoid(features))
    mmt: np.ndarray  # (N, 2, 2) M M^T
    uncertainty: np.ndarray  # (N,)
    ray_novel: np.ndarray  # (N, 3) d(cam point)/d(depth) in novel frame
    novel_pts: np.ndarray  # (N, 3) novel-camera-frame coordinates
    stretch: np.ndarray  # (N,) eigenvalue ratio of cov
    skipped_grazing: int
    skipped_behind: int

    def __len__(self):
        return len(self.cam_depth)


def build_splats(view: InputView, novel_cam: CameraModel) -> SplatBatch:
    """Project every valid source pixel of `view` into `novel_cam`."""
    rows, cols = np.nonzero(view.valid)
    pix_uv = np.stack([cols.astype(np.float64), rows.astype(np.float64)], axis=1)
    depths = view.depth[rows, cols]
    normals = view.normal[rows, cols]
    unc = np.exp(view.uncertainty_logit[rows, cols])
    out = covariance_batch(view.camera, novel_cam, pix_uv, depths, normals, unc)
    keep = out["in_front"] & ~out["grazing"]
    n_grazing = int(np.count_nonzero(out["grazing"] & out["in_front"]))
    n_behind = int(np.count_nonzero(~out["in_front"]))

    rows, cols = rows[keep], cols[keep]
    cov = out["cov"][keep]
    det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] * cov[:, 1, 0]
    feat = 1.0 / (1.0 + np.exp(-view.feature_logit[rows, cols]))
    payload = np.concatenate([view.mu * view.color[rows, cols], feat], axis=1)
    # d(world point)/d(depth) is the input-camera ray direction
    ray_cam = np.stack(
        [
            (cols - view.camera.cx) / view.camera.fx,
            (rows - view.camera.cy) / view.camera.fy,
            np.ones(len(rows)),
        ],
        axis=1,
    )
    ray_world = ray_cam @ view.camera.rotation
    return SplatBatch(
        view_id=view.id,
        src_rows=rows,
        src_cols=cols,
        mean=out["mean"][keep],
        cov=cov,
        cov_inv=_inv2(cov, det),
        cam_depth=out["cam_depth"][keep],
        payload=payload,
        mmt=out["mmt"][keep],
        uncertainty=unc[keep],
        ray_novel=ray_world @ novel_cam.rotation.T,
        novel_pts=novel_cam.world_to_cam(out["points"][keep]),
        stretch=eig_ratio_batch(cov),
        skipped_grazing=n_grazing,
        skipped_behind=n_behind,
    )


# ---------------------------------------------------------------------------
# Forward rasterization


@dataclass
class ViewRaster:
    """One view composited into the novel frame, with retained fragments."""

    view_id: int
    height: int
    width: int
    payload: np.ndarray  # (H, W, 9)
    alpha: np.ndarray  # (H, W) accumulated opacity A_n
    transmittance: np.ndarray  # (H, W) final per-pixel transmittance
    stretch_num: np.ndarray  # (H, W) sum of w_i * stretch_i
    splats: SplatBatch
    cutoff_r: int
    # flat fragment arrays, pixel-major, depth-sorted within each pixel
    frag_pix: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    frag_splat: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    frag_alpha: np.ndarray = field(default_factory=lambda: np.empty(0))
    frag_t_before: np.ndarray = field(default_factory=lambda: np.empty(0))
    frag_included: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))
    retained: bool = False

    def fragments_at(self, row: int, col: int):
        """Depth-ordered (splat_idx, alpha, cam_depth) list at one pixel."""
        if not self.retained:
            raise InvalidInputError("raster was built without retained fragments")
        pix = row * self.width + col
        sel = np.flatnonzero(self.frag_pix == pix)
        return [
            (int(self.frag_splat[i]), float(self.frag_alpha[i]),
             float(self.splats.cam_depth[self.frag_splat[i]]))
            for i in sel
        ]


def _sparse_fragments(splats: SplatBatch, height: int, width: int, radius: int):
    """(pix, splat) fragment candidates within `radius` of each mean."""
    n = len(splats)
    if n == 0:
        return (np.empty(0, dtype=np.int64),) * 2 + (np.empty(0),)
    side = np.arange(-radius, radius + 1)
    off_v, off_u = np.meshgrid(side, side, indexing="ij")
    off_u = off_u.ravel()
    off_v = off_v.ravel()
    cen_u = np.round(splats.mean[:, 0]).astype(np.int64)
    cen_v = np.round(splats.mean[:, 1]).astype(np.int64)
    pu = cen_u[:, None] + off_u[None, :]
    pv = cen_v[:, None] + off_v[None, :]
    du = pu - splats.mean[:, 0][:, None]
    dv = pv - splats.mean[:, 1][:, None]
    ok = (
        (pu >= 0)
        & (pu < width)
        & (pv >= 0)
        & (pv < height)
        & (du * du + dv * dv <= radius * radius)
    )
    sidx, fidx = np.nonzero(ok)
    pix = pv[sidx, fidx] * width + pu[sidx, fidx]
    q = splats.cov_inv[sidx]
    dx = du[sidx, fidx]
    dy = dv[sidx, fidx]
    quad = q[:, 0, 0] * dx * dx + 2.0 * q[:, 0, 1] * dx * dy + q[:, 1, 1] * dy * dy
    alpha = ALPHA_PEAK * np.exp(-0.5 * quad)
    return pix, sidx, alpha


def _sort_fragments(splats: SplatBatch, pix, sidx, alpha, src_width: int):
    """Pixel-major sort, by depth then (source row-major pixel) tie-break."""
    src_lin = splats.src_rows[sidx] * src_width + splats.src_cols[sidx]
    order = np.lexsort((src_lin, splats.cam_depth[sidx], pix))
    return pix[order], sidx[order], alpha[order]


def _composite_sorted(
    splats: SplatBatch,
    pix,
    sidx,
    alpha,
    height: int,
    width: int,
    kd: int | None,
    early_term: bool,
):
    """Front-to-back compositing over pixel-major sorted fragments.

    Accumulation walks fragments rank-by-rank inside each pixel so the
    floating-point order matches a per-pixel sequential loop exactly.
    """
    npix = height * width
    payload = np.zeros((npix, 9))
    trans = np.ones(npix)
    stretch_num = np.zeros(npix)
    t_before = np.zeros(len(pix))
    included = np.zeros(len(pix), dtype=bool)

    if len(pix):
        seg_start = np.r_[0, np.flatnonzero(np.diff(pix)) + 1]
        seg_id = np.cumsum(np.isin(np.arange(len(pix)), seg_start)) - 1
        rank = np.arange(len(pix)) - seg_start[seg_id]
        keep = np.ones(len(pix), dtype=bool) if kd is None else rank < kd
        # rank among kept fragments, per pixel segment
        csum = np.cumsum(keep)
        base = csum[seg_start] - keep[seg_start]
        rank2 = np.where(keep, csum - 1 - base[seg_id], -1)
        max_rank = int(rank2.max()) if np.any(keep) else -1
        for r in range(max_rank + 1):
            sel = np.flatnonzero(rank2 == r)
            if sel.size == 0:
                break
            p = pix[sel]
            t = trans[p]
            t_before[sel] = t
            inc = t >= MIN_TRANSMITTANCE if early_term else np.ones(len(sel), bool)
            included[sel] = inc
            sel = sel[inc]
            p = p[inc]
            t = t[inc]
            a = alpha[sel]
            w = a * t
            payload[p] += w[:, None] * splats.payload[sidx[sel]]
            stretch_num[p] += w * splats.stretch[sidx[sel]]
            trans[p] = t * (1.0 - a)

    return payload, trans, stretch_num, t_before, included


def _dense_forward(splats: SplatBatch, height: int, width: int, src_width: int,
                   retain: bool):
    """Cutoff-free path: every splat contributes to every pixel.

    Splats are depth-sorted globally (depth is constant over the image for
    one splat), then composited one at a time over the full frame; this
    reproduces a per-pixel sequential front-to-back loop bit for bit.
    """
    npix = height * width
    src_lin = splats.src_rows * src_width + splats.src_cols
    order = np.lexsort((src_lin, splats.cam_depth))
    vv, uu = np.mgrid[0:height, 0:width]
    uu = uu.ravel().astype(np.float64)
    vv = vv.ravel().astype(np.float64)
    payload = np.zeros((npix, 9))
    trans = np.ones(npix)
    stretch_num = np.zeros(npix)
    n = len(order)
    frag_alpha = np.empty((n, npix)) if retain else None
    frag_t = np.empty((n, npix)) if retain else None
    for k, s in enumerate(order):
        q = splats.cov_inv[s]
        dx = uu - splats.mean[s, 0]
        dy = vv - splats.mean[s, 1]
        quad = q[0, 0] * dx * dx + 2.0 * q[0, 1] * dx * dy + q[1, 1] * dy * dy
        a = ALPHA_PEAK * np.exp(-0.5 * quad)
        w = a * trans
        if retain:
            frag_alpha[k] = a
            frag_t[k] = trans
        payload += w[:, None] * splats.payload[s][None, :]
        stretch_num += w * splats.stretch[s]
        trans = trans * (1.0 - a)

    frags = None
    if retain:
        # rebuild pixel-major fragment arrays for the shared backward pass
        pix = np.tile(np.arange(npix, dtype=np.int64), n)
        sidx = np.repeat(order, npix)
        alpha = frag_alpha.ravel()
        tb = frag_t.ravel()
        perm = np.lexsort((np.arange(len(pix)), pix))
        frags = (pix[perm], sidx[perm], alpha[perm], tb[perm],
                 np.ones(len(pix), dtype=bool))
    return payload, trans, stretch_num, frags


def rasterize_view(
    view: InputView,
    novel_cam: CameraModel,
    size: tuple[int, int] | None = None,
    *,
    kd: int = KD_DEFAULT,
    cutoffs: bool = True,
    retain: bool = True,
) -> ViewRaster:
    """Splat one input view into the novel camera and composite it.

    `size` is (height, width); defaults to the novel camera's dimensions.
    With ``cutoffs=False`` the cutoff radius, the k_d cap and early alpha
    termination are all disabled (used by the oracle comparisons and the
    finite-difference gradient checks; quadratic cost, keep images small).
    """
    height, width = size if size is not None else (novel_cam.height, novel_cam.width)
    splats = build_splats(view, novel_cam)
    if cutoffs:
        radius = cutoff_radius(splats.cov) if len(splats) else 0
        pix, sidx, alpha = _sparse_fragments(splats, height, width, radius)
        pix, sidx, alpha = _sort_fragments(splats, pix, sidx, alpha, view.camera.width)
        payload, trans, stretch_num, t_before, included = _composite_sorted(
            splats, pix, sidx, alpha, height, width, kd, True
        )
        frags = (pix, sidx, alpha, t_before, included)
    else:
        radius = 0
        payload, trans, stretch_num, frags = _dense_forward(
            splats, height, width, view.camera.width, retain
        )
        if frags is None:
            frags = (np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0),
                     np.empty(0), np.empty(0, bool))

    raster = ViewRaster(
        view_id=view.id,
        height=height,
        width=width,
        payload=payload.reshape(height, width, 9),
        alpha=(1.0 - trans).reshape(height, width),
        transmittance=trans.reshape(height, width),
        stretch_num=stretch_num.reshape(height, width),
        splats=splats,
        cutoff_r=radius,
        retained=retain,
    )
    if raster.retained:
        (raster.frag_pix, raster.frag_splat, raster.frag_alpha,
         raster.frag_t_before, raster.frag_included) = frags
    return raster


# ---------------------------------------------------------------------------
# Backward passes


def _segment_ids(pix: np.ndarray):
    seg_start = np.r_[0, np.flatnonzero(np.diff(pix)) + 1]
    seg_id = np.zeros(len(pix), dtype=np.int64)
    seg_id[seg_start[1:]] = 1
    return np.cumsum(seg_id), seg_start


def composite_backward(raster: ViewRaster, upstream: np.ndarray):
    """Gradients of the composited payload w.r.t. fragment payloads/alphas.

    `upstream` is an (H, W, 9) gradient on the composited payload map.
    Returns (d_payload (M, 9), d_alpha (M,)) aligned with the raster's
    fragment arrays; fragments skipped by early termination get zeros.
    The depth ordering is treated as constant.
    """
    if not raster.retained:
        raise InvalidInputError("backward pass requires retained fragments")
    up = upstream.reshape(-1, 9)
    pix = raster.frag_pix
    m = len(pix)
    d_payload = np.zeros((m, 9))
    d_alpha = np.zeros(m)
    if m == 0:
        return d_payload, d_alpha

    inc = raster.frag_included
    alpha = raster.frag_alpha
    tb = raster.frag_t_before
    w = np.where(inc, alpha * tb, 0.0)
    gdot = np.einsum("mi,mi->m", up[pix], raster.splats.payload[raster.frag_splat])

    d_payload[inc] = up[pix[inc]] * w[inc][:, None]

    # suffix_i = sum_{l > i, same pixel} gdot_l * w_l  (included fragments only)
    s = gdot * w
    seg_id, seg_start = _segment_ids(pix)
    csum = np.cumsum(s)
    seg_end = np.r_[seg_start[1:], m] - 1
    suffix = csum[seg_end][seg_id] - csum
    d_alpha[inc] = gdot[inc] * tb[inc] - suffix[inc] / (1.0 - alpha[inc])
    return d_payload, d_alpha


@dataclass
class ParamGrads:
    """Per-view parameter gradients in source-image layout."""

    color: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W)
    normal: np.ndarray  # (H, W, 3)
    uncertainty_logit: np.ndarray  # (H, W)
    feature_logit: np.ndarray  # (H, W, 6)
    mu: float

    def scale(self, c: float) -> "ParamGrads":
        return ParamGrads(
            self.color * c, self.depth * c, self.normal * c,
            self.uncertainty_logit * c, self.feature_logit * c, self.mu * c,
        )


def _cov_only(view: InputView, novel_cam, rows, cols, depths, normals, unc):
    pix_uv = np.stack([cols.astype(np.float64), rows.astype(np.float64)], axis=1)
    out = covariance_batch(view.camera, novel_cam, pix_uv, depths, normals, unc)
    bad = out["grazing"] | ~out["in_front"]
    cov = out["cov"]
    cov[bad] = np.nan
    return cov


_FD_STEP = 1e-4


def attribute_backward(
    view: InputView,
    novel_cam: CameraModel,
    raster: ViewRaster,
    d_payload: np.ndarray,
    d_alpha: np.ndarray,
) -> ParamGrads:
    """Chain fragment gradients into the view's optimizable attribute maps.

    Payload gradients route through harmonization (mu * color) and the
    feature sigmoid. Alpha gradients route through the Gaussian exponent
    into the screen mean (analytic down to depth) and covariance; the
    covariance's dependence on depth and on the normal is differentiated
    by central finite differences of the covariance construction.
    """
    sp = raster.splats
    n = len(sp)
    h, w = view.camera.height, view.camera.width
    grads = ParamGrads(
        color=np.zeros((h, w, 3)),
        depth=np.zeros((h, w)),
        normal=np.zeros((h, w, 3)),
        uncertainty_logit=np.zeros((h, w)),
        feature_logit=np.zeros((h, w, 6)),
        mu=0.0,
    )
    if n == 0 or len(raster.frag_pix) == 0:
        return grads

    # fragment -> per-splat accumulation
    d_payload_s = np.zeros((n, 9))
    np.add.at(d_payload_s, raster.frag_splat, d_payload)

    pix = raster.frag_pix
    pu = (pix % raster.width).astype(np.float64)
    pv = (pix // raster.width).astype(np.float64)
    sidx = raster.frag_splat
    diff = np.stack([pu, pv], axis=1) - sp.mean[sidx]
    qd = np.einsum("mij,mj->mi", sp.cov_inv[sidx], diff)
    coef = d_alpha * raster.frag_alpha
    d_mean_s = np.zeros((n, 2))
    np.add.at(d_mean_s, sidx, coef[:, None] * qd)
    d_cov_s = np.zeros((n, 2, 2))
    np.add.at(d_cov_s, sidx, 0.5 * coef[:, None, None] * np.einsum("mi,mj->mij", qd, qd))

    rows, cols = sp.src_rows, sp.src_cols

    # payload chain: harmonized color and sigmoid features
    color_s = view.color[rows, cols]
    grads.color[rows, cols] += view.mu * d_payload_s[:, :3]
    grads.mu += float(np.sum(color_s * d_payload_s[:, :3]))
    feat = 1.0 / (1.0 + np.exp(-view.feature_logit[rows, cols]))
    grads.feature_logit[rows, cols] += d_payload_s[:, 3:] * feat * (1.0 - feat)

    # uncertainty chain: cov = U * sigma0^2 * M M^T + eps I
    d_unc = np.einsum("nij,nij->n", d_cov_s, sp.mmt) * (SIGMA0 * SIGMA0)
    grads.uncertainty_logit[rows, cols] += d_unc * sp.uncertainty

    # depth chain, analytic part through the projected mean
    y = sp.novel_pts
    g = sp.ray_novel
    z2 = y[:, 2] * y[:, 2]
    dm_dd = np.stack(
        [
            novel_cam.fx * (g[:, 0] * y[:, 2] - y[:, 0] * g[:, 2]) / z2,
            novel_cam.fy * (g[:, 1] * y[:, 2] - y[:, 1] * g[:, 2]) / z2,
        ],
        axis=1,
    )
    d_depth = np.einsum("ni,ni->n", d_mean_s, dm_dd)

    # depth chain, covariance part (finite differences)
    depths = view.depth[rows, cols]
    normals = view.normal[rows, cols]
    unc = sp.uncertainty
    hd = _FD_STEP * np.maximum(depths, 1.0)
    cov_p = _cov_only(view, novel_cam, rows, cols, depths + hd, normals, unc)
    cov_m = _cov_only(view, novel_cam, rows, cols, depths - hd, normals, unc)
    dcov_dd = (cov_p - cov_m) / (2.0 * hd)[:, None, None]
    d_depth += np.nan_to_num(np.einsum("nij,nij->n", d_cov_s, dcov_dd))
    grads.depth[rows, cols] += d_depth

    # normal chain (finite differences, renormalized steps)
    d_normal = np.zeros((n, 3))
    for k in range(3):
        step = np.zeros(3)
        step[k] = _FD_STEP
        npos = normals + step
        npos /= np.linalg.norm(npos, axis=1, keepdims=True)
        nneg = normals - step
        nneg /= np.linalg.norm(nneg, axis=1, keepdims=True)
        cov_p = _cov_only(view, novel_cam, rows, cols, depths, npos, unc)
        cov_m = _cov_only(view, novel_cam, rows, cols, depths, nneg, unc)
        dcov_dn = (cov_p - cov_m) / (2.0 * _FD_STEP)
        d_normal[:, k] = np.nan_to_num(np.einsum("nij,nij->n", d_cov_s, dcov_dn))
    grads.normal[rows, cols] += d_normal

    return grads


# ---------------------------------------------------------------------------
# Layered fast-path approximation


@dataclass
class LayeredRaster:
    """Per-view output of the layered compositor.

    `bin_depth`/`bin_beta` hold at most `layers` aggregate depth samples
    per pixel for the probabilistic depth test.
    """

    view_id: int
    height: int
    width: int
    payload: np.ndarray  # (H, W, 9)
    alpha: np.ndarray  # (H, W)
    transmittance: np.ndarray  # (H, W)
    stretch_num: np.ndarray  # (H, W)
    bin_depth: np.ndarray  # (H, W, L)
    bin_beta: np.ndarray  # (H, W, L)


def layered_composite(
    views: list[InputView],
    novel_cam: CameraModel,
    size: tuple[int, int] | None = None,
    layers: int = 10,
) -> list[LayeredRaster]:
    """Order-free approximation of per-view compositing with depth bins.

    The global depth interval comes from a 1/16-resolution nearest/farthest
    depth raster of all lifted points; opacity accumulates per bin as
    sum log(1-alpha), so splat order never matters inside a bin.
    """
    if layers < 1:
        raise InvalidInputError("layers must be >= 1")
    height, width = size if size is not None else (novel_cam.height, novel_cam.width)
    batches = [build_splats(v, novel_cam) for v in views]

    # depth interval from a low-resolution min/max raster
    cell = 16
    lw = max(1, (width + cell - 1) // cell)
    lh = max(1, (height + cell - 1) // cell)
    dmin_r = np.full(lh * lw, np.inf)
    dmax_r = np.full(lh * lw, -np.inf)
    for sp in batches:
        if len(sp) == 0:
            continue
        cu = (sp.mean[:, 0] / cell).astype(np.int64)
        cv = (sp.mean[:, 1] / cell).astype(np.int64)
        ok = (cu >= 0) & (cu < lw) & (cv >= 0) & (cv < lh)
        lin = cv[ok] * lw + cu[ok]
        np.minimum.at(dmin_r, lin, sp.cam_depth[ok])
        np.maximum.at(dmax_r, lin, sp.cam_depth[ok])
    covered = np.isfinite(dmin_r)
    if not covered.any():
        dmin, dmax = 1.0, 2.0
    else:
        dmin = float(dmin_r[covered].min())
        dmax = float(dmax_r[covered].max())
    if dmax - dmin < 1e-9:
        dmax = dmin + 1e-9
    bin_w = (dmax - dmin) / layers

    out = []
    npix = height * width
    for view, sp in zip(views, batches):
        log_t = np.zeros((npix, layers))
        a_sum = np.zeros((npix, layers))
        a_pay = np.zeros((npix, layers, 9))
        a_depth = np.zeros((npix, layers))
        a_stretch = np.zeros(npix)
        if len(sp):
            radius = cutoff_radius(sp.cov)
            pix, sidx, alpha = _sparse_fragments(sp, height, width, radius)
            if len(pix):
                bins = np.clip(
                    ((sp.cam_depth[sidx] - dmin) / bin_w).astype(np.int64), 0, layers - 1
                )
                np.add.at(log_t, (pix, bins), np.log1p(-alpha))
                np.add.at(a_sum, (pix, bins), alpha)
                np.add.at(a_pay, (pix, bins), alpha[:, None] * sp.payload[sidx])
                np.add.at(a_depth, (pix, bins), alpha * sp.cam_depth[sidx])
                np.add.at(a_stretch, pix, alpha * sp.stretch[sidx])

        bin_a = 1.0 - np.exp(log_t)
        safe = np.where(a_sum > 0, a_sum, 1.0)
        bin_pay = a_pay / safe[:, :, None]
        bin_depth = a_depth / safe

        payload = np.zeros((npix, 9))
        trans = np.ones(npix)
        beta = np.zeros((npix, layers))
        for b in range(layers):
            beta[:, b] = trans * bin_a[:, b]
            payload += beta[:, b][:, None] * bin_pay[:, b]
            trans = trans * (1.0 - bin_a[:, b])

        tot_a = a_sum.sum(axis=1)
        stretch_num = np.where(tot_a > 0, a_stretch / np.where(tot_a > 0, tot_a, 1.0), 0.0)
        alpha_map = 1.0 - trans
        out.append(
            LayeredRaster(
                view_id=view.id,
                height=height,
                width=width,
                payload=payload.reshape(height, width, 9),
                alpha=alpha_map.reshape(height, width),
                transmittance=trans.reshape(height, width),
                stretch_num=(stretch_num * alpha_map).reshape(height, width),
                bin_depth=bin_depth.reshape(height, width, layers),
                bin_beta=beta.reshape(height, width, layers),
            )
        )
    return out
