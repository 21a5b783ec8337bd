"""Synthetic scene generation: exact planar geometry, procedural texture.

Scenes are built from finite rectangles with analytic ray intersections,
so depth maps and normals are exact; colors sample a deterministic 3D
texture at the surface point, making all views mutually consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .scene import CameraModel, InputView, Scene, look_at

__all__ = ["SyntheticSpec", "Rect", "preset_rects", "gen_synthetic", "gen_synthetic_with_truth"]

PRESETS = ("textured-plane", "two-walls", "box-corner")
TEXTURES = ("checker", "value-noise")


@dataclass
class SyntheticSpec:
    preset: str = "textured-plane"
    resolution: int = 64
    views: int = 3
    arc_degrees: float = 50.0
    texture: str = "value-noise"
    depth_noise: float = 0.0  # relative sigma, applied to one view
    depth_noise_view: int | None = None  # defaults to the middle view
    exposure_factors: list | None = None  # ground-truth mu per view
    seed: int = 0

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise InvalidInputError(f"unknown preset {self.preset!r}")
        if self.texture not in TEXTURES:
            raise InvalidInputError(f"unknown texture {self.texture!r}")
        if self.views < 1:
            raise InvalidInputError("need at least one view")
        if self.resolution < 16:
            raise InvalidInputError("resolution must be >= 16")


@dataclass
class Rect:
    """Finite parallelogram: p0 + a*ea + b*eb for a, b in [0, 1]."""

    p0: np.ndarray
    ea: np.ndarray
    eb: np.ndarray

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=np.float64)
        self.ea = np.asarray(self.ea, dtype=np.float64)
        self.eb = np.asarray(self.eb, dtype=np.float64)

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.ea, self.eb)
        return n / np.linalg.norm(n)


def preset_rects(preset: str) -> list[Rect]:
    # large enough to fill the frustum of every arc camera
    back = Rect((-5.0, -4.0, 0.0), (10.0, 0.0, 0.0), (0.0, 8.0, 0.0))
    if preset == "textured-plane":
        return [back]
    if preset == "two-walls":
        front = Rect((0.1, -1.5, -0.8), (1.3, 0.0, 0.0), (0.0, 3.0, 0.0))
        return [back, front]
    if preset == "box-corner":
        left = Rect((-2.0, -1.5, 0.0), (0.0, 0.0, -2.0), (0.0, 3.0, 0.0))
        floor = Rect((-2.0, 1.5, 0.0), (4.0, 0.0, 0.0), (0.0, 0.0, -2.0))
        return [back, left, floor]
    raise InvalidInputError(f"unknown preset {preset!r}")


def _raycast(rects, origins, dirs):
    """Nearest-hit t for rays origin + t*dir against all rectangles.

    t is measured in units of the direction vector (camera z depth when
    the direction has unit camera-frame z). Returns (t, normal, hit).
    """
    n_rays = len(dirs)
    best_t = np.full(n_rays, np.inf)
    best_n = np.zeros((n_rays, 3))
    for rect in rects:
        n = rect.normal
        denom = dirs @ n
        ok = np.abs(denom) > 1e-12
        t = np.where(ok, ((rect.p0 - origins) @ n) / np.where(ok, denom, 1.0), np.inf)
        x = origins + t[:, None] * dirs
        rel = x - rect.p0
        aa = rect.ea @ rect.ea
        bb = rect.eb @ rect.eb
        a = rel @ rect.ea / aa
        b = rel @ rect.eb / bb
        hit = ok & (t > 1e-6) & (a >= 0) & (a <= 1) & (b >= 0) & (b <= 1)
        closer = hit & (t < best_t)
        best_t[closer] = t[closer]
        best_n[closer] = n
    return best_t, best_n, np.isfinite(best_t)


class _ValueNoise:
    """Trilinear-interpolated lattice noise, periodic with a seeded table."""

    def __init__(self, seed: int, period: int = 32):
        rng = np.random.default_rng(seed)
        self.table = rng.random((period, period, period, 3))
        self.period = period

    def __call__(self, points: np.ndarray, scale: float = 1.0) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64) / scale
        i0 = np.floor(p).astype(np.int64)
        frac = p - i0
        # smoothstep for C1 continuity
        f = frac * frac * (3.0 - 2.0 * frac)
        out = np.zeros(p.shape[:-1] + (3,))
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    idx = (i0 + np.array([dx, dy, dz])) % self.period
                    val = self.table[idx[..., 0], idx[..., 1], idx[..., 2]]
                    wx = f[..., 0] if dx else 1.0 - f[..., 0]
                    wy = f[..., 1] if dy else 1.0 - f[..., 1]
                    wz = f[..., 2] if dz else 1.0 - f[..., 2]
                    out += (wx * wy * wz)[..., None] * val
        return 0.2 + 0.6 * out


def _checker(points: np.ndarray) -> np.ndarray:
    cells = np.floor(np.asarray(points) / 0.25).sum(axis=-1).astype(np.int64)
    light = np.array([0.85, 0.85, 0.8])
    dark = np.array([0.15, 0.2, 0.25])
    return np.where((cells % 2 == 0)[..., None], light, dark)


def _cameras(spec: SyntheticSpec):
    res = spec.resolution
    fx = 0.8 * res
    cams = []
    span = np.deg2rad(spec.arc_degrees)
    angles = (
        np.linspace(-span / 2, span / 2, spec.views) if spec.views > 1 else [0.0]
    )
    radius = 3.5
    for theta in angles:
        pos = np.array([radius * np.sin(theta), -0.3, -radius * np.cos(theta)])
        rot, t = look_at(pos, (0.0, 0.0, 0.0))
        cams.append(
            CameraModel(
                width=res, height=res, fx=fx, fy=fx,
                cx=(res - 1) / 2.0, cy=(res - 1) / 2.0,
                rotation=rot, translation=t,
            )
        )
    return cams


def gen_synthetic_with_truth(spec: SyntheticSpec):
    """Generate a scene; returns (scene, truth dict with per-view mu)."""
    rects = preset_rects(spec.preset)
    texture = (
        _ValueNoise(spec.seed) if spec.texture == "value-noise" else None
    )
    rng = np.random.default_rng(spec.seed + 1)
    cams = _cameras(spec)
    if spec.exposure_factors is not None:
        if len(spec.exposure_factors) != spec.views:
            raise InvalidInputError("exposure_factors length must match view count")
        factors = [float(f) for f in spec.exposure_factors]
    else:
        factors = [1.0] * spec.views

    noise_view = spec.depth_noise_view
    if spec.depth_noise > 0 and noise_view is None:
        noise_view = spec.views // 2

    views = []
    res = spec.resolution
    vv, uu = np.mgrid[0:res, 0:res].astype(np.float64)
    for vid, cam in enumerate(cams):
        ray_cam = np.stack(
            [(uu - cam.cx) / cam.fx, (vv - cam.cy) / cam.fy, np.ones_like(uu)],
            axis=-1,
        ).reshape(-1, 3)
        ray_world = ray_cam @ cam.rotation
        origin = np.broadcast_to(cam.position, ray_world.shape)
        t, normals, hit = _raycast(rects, origin, ray_world)
        pts = origin + np.where(hit, t, 1.0)[:, None] * ray_world
        # orient normals toward the camera
        flip = np.einsum("ni,ni->n", normals, origin - pts) < 0
        normals = np.where(flip[:, None], -normals, normals)
        color = texture(pts) if texture is not None else _checker(pts)
        color[~hit] = 0.0
        depth = np.where(hit, t, 0.0)
        if spec.depth_noise > 0 and vid == noise_view:
            g = np.clip(rng.standard_normal(depth.shape), -3.0, 3.0)
            depth = np.where(hit, depth * (1.0 + spec.depth_noise * g), depth)
        views.append(
            InputView.create(
                view_id=vid,
                camera=cam,
                color=(color / factors[vid]).reshape(res, res, 3),
                depth=depth.reshape(res, res),
                valid=hit.reshape(res, res),
                normal=normals.reshape(res, res, 3),
                mu=1.0,
            )
        )
    scene = Scene(views=views, rng_seed=spec.seed)
    return scene, {"mu": factors, "depth_noise_view": noise_view}


def gen_synthetic(spec: SyntheticSpec) -> Scene:
    return gen_synthetic_with_truth(spec)[0]
