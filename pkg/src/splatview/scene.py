"""Camera models, per-view attribute maps, and the scene container.

Conventions used throughout the toolkit:

* images are numpy arrays indexed ``[row, col]`` with row 0 at the top;
* continuous pixel coordinates are ``(u, v)`` with ``u`` the column and
  ``v`` the row, and the center of pixel ``(i, j)`` at ``(u=j, v=i)``;
* a camera stores a world-to-camera rigid transform: ``x_cam = R @ X + t``;
* normals live in the world frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, InvalidInputError

__all__ = [
    "CameraModel",
    "InputView",
    "Scene",
    "lift_pixel",
    "project_point",
    "apply_harmonization",
    "look_at",
]

_MIN_DEPTH = 1e-9


@dataclass
class CameraModel:
    """Pinhole camera with a rigid world-to-camera pose."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # (3, 3) world-to-camera
    translation: np.ndarray  # (3,) world-to-camera, meters

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("image dimensions must be >= 1")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInputError("focal lengths must be positive")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-9:
            raise InvalidInputError(f"rotation is not orthonormal (err={err:g})")
        if abs(np.linalg.det(self.rotation) - 1.0) > 1e-9:
            raise InvalidInputError("rotation must have determinant +1")

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_cam(self, points: np.ndarray) -> np.ndarray:
        """Transform (..., 3) world points into the camera frame."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def cam_to_world(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.translation) @ self.rotation

    def with_crop(self, row0: int, col0: int, height: int, width: int) -> "CameraModel":
        """Camera rendering only the [row0:row0+h, col0:col0+w] window."""
        return CameraModel(
            width=width,
            height=height,
            fx=self.fx,
            fy=self.fy,
            cx=self.cx - col0,
            cy=self.cy - row0,
            rotation=self.rotation.copy(),
            translation=self.translation.copy(),
        )

    def project_many(self, world: np.ndarray):
        """Vectorized projection of (N, 3) world points.

        Returns (pixels (N, 2) as (u, v), depths (N,), in_front mask (N,)).
        Behind-camera points get NaN pixels instead of raising.
        """
        cam = self.world_to_cam(world)
        z = cam[..., 2]
        ok = z > _MIN_DEPTH
        zsafe = np.where(ok, z, 1.0)
        u = self.fx * cam[..., 0] / zsafe + self.cx
        v = self.fy * cam[..., 1] / zsafe + self.cy
        pix = np.stack([u, v], axis=-1)
        pix[~ok] = np.nan
        return pix, z, ok

    def lift_many(self, pixels: np.ndarray, depths: np.ndarray) -> np.ndarray:
        """Vectorized lift of (N, 2) (u, v) pixels at (N,) depths to world."""
        pixels = np.asarray(pixels, dtype=np.float64)
        depths = np.asarray(depths, dtype=np.float64)
        x = (pixels[..., 0] - self.cx) / self.fx
        y = (pixels[..., 1] - self.cy) / self.fy
        cam = np.stack([x, y, np.ones_like(x)], axis=-1) * depths[..., None]
        return self.cam_to_world(cam)


@dataclass
class InputView:
    """One calibrated input image with its optimizable attribute maps.

    Uncertainty is stored as ``uncertainty_logit`` with U = exp(logit), and
    the 6-d latent features as pre-sigmoid logits, so positivity and range
    constraints hold by construction.
    """

    id: int
    camera: CameraModel
    color: np.ndarray  # (H, W, 3) in [0, 1]
    depth: np.ndarray  # (H, W) meters
    valid: np.ndarray  # (H, W) bool
    normal: np.ndarray  # (H, W, 3) unit, world frame
    uncertainty_logit: np.ndarray  # (H, W); U = exp(logit)
    feature_logit: np.ndarray  # (H, W, 6); feature = sigmoid(logit)
    mu: float = 1.0

    def __post_init__(self):
        h, w = self.camera.height, self.camera.width
        self.color = np.ascontiguousarray(self.color, dtype=np.float64)
        self.depth = np.ascontiguousarray(self.depth, dtype=np.float64)
        self.valid = np.ascontiguousarray(self.valid, dtype=bool)
        self.normal = np.ascontiguousarray(self.normal, dtype=np.float64)
        self.uncertainty_logit = np.ascontiguousarray(
            self.uncertainty_logit, dtype=np.float64
        )
        self.feature_logit = np.ascontiguousarray(self.feature_logit, dtype=np.float64)
        if self.color.shape != (h, w, 3):
            raise InvalidInputError(f"color map shape {self.color.shape} != {(h, w, 3)}")
        if self.depth.shape != (h, w) or self.valid.shape != (h, w):
            raise InvalidInputError("depth/valid map shape mismatch")
        if self.normal.shape != (h, w, 3):
            raise InvalidInputError("normal map shape mismatch")
        if self.uncertainty_logit.shape != (h, w):
            raise InvalidInputError("uncertainty map shape mismatch")
        if self.feature_logit.shape != (h, w, 6):
            raise InvalidInputError("feature map shape mismatch")
        if self.mu < 0:
            raise InvalidInputError("mu must be >= 0")
        if np.any(self.depth[self.valid] <= 0):
            raise InvalidInputError("valid depth entries must be positive")

    @property
    def uncertainty(self) -> np.ndarray:
        return np.exp(self.uncertainty_logit)

    @property
    def features(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.feature_logit))

    @staticmethod
    def create(
        view_id: int,
        camera: CameraModel,
        color: np.ndarray,
        depth: np.ndarray,
        valid: np.ndarray,
        normal: np.ndarray,
        uncertainty: float = 0.5,
        mu: float = 1.0,
    ) -> "InputView":
        """Build a view with default uncertainty and features = 0.5."""
        h, w = camera.height, camera.width
        return InputView(
            id=view_id,
            camera=camera,
            color=color,
            depth=depth,
            valid=valid,
            normal=normal,
            uncertainty_logit=np.full((h, w), np.log(uncertainty)),
            feature_logit=np.zeros((h, w, 6)),
            mu=mu,
        )


@dataclass
class Scene:
    views: list = field(default_factory=list)
    background_color: np.ndarray = field(
        default_factory=lambda: np.zeros(3, dtype=np.float64)
    )
    depth_sigma: float | None = None  # None => auto (1% of median valid depth)
    rng_seed: int = 0

    def __post_init__(self):
        self.background_color = np.asarray(self.background_color, dtype=np.float64)
        if not self.views:
            raise InvalidInputError("a scene needs at least one view")
        ids = [v.id for v in self.views]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("view ids must be unique")
        if self.depth_sigma is not None and self.depth_sigma <= 0:
            raise InvalidInputError("depth_sigma must be positive")

    def view_by_id(self, view_id: int) -> InputView:
        for v in self.views:
            if v.id == view_id:
                return v
        raise InvalidInputError(f"no view with id {view_id}")

    def resolve_sigma(self) -> float:
        """Triangle-distribution sigma: explicit, or 1% of median valid depth."""
        if self.depth_sigma is not None:
            return float(self.depth_sigma)
        depths = np.concatenate([v.depth[v.valid].ravel() for v in self.views])
        if depths.size == 0:
            return 0.01
        return max(float(np.median(depths)) * 0.01, 1e-9)


def lift_pixel(view: InputView, pixel, depth: float) -> np.ndarray:
    """Lift a continuous (u, v) pixel at the given depth to a world point."""
    pixel = np.asarray(pixel, dtype=np.float64).reshape(2)
    if depth <= 0:
        raise InvalidInputError(f"depth must be positive, got {depth}")
    cam = view.camera
    u, v = pixel
    if not (-0.5 <= u < cam.width - 0.5 and -0.5 <= v < cam.height - 0.5):
        raise InvalidInputError(f"pixel {pixel} outside {cam.width}x{cam.height} image")
    return cam.lift_many(pixel[None], np.array([depth]))[0]


def project_point(camera: CameraModel, world) -> tuple[np.ndarray, float]:
    """Project a world point; returns ((u, v), camera-frame depth)."""
    world = np.asarray(world, dtype=np.float64).reshape(3)
    cam = camera.world_to_cam(world)
    if cam[2] <= _MIN_DEPTH:
        raise BehindCameraError(f"point has camera depth {cam[2]:g}")
    u = camera.fx * cam[0] / cam[2] + camera.cx
    v = camera.fy * cam[1] / cam[2] + camera.cy
    return np.array([u, v]), float(cam[2])


def apply_harmonization(view: InputView) -> np.ndarray:
    """Per-view exposure: mu * color, unclamped."""
    return view.mu * view.color


def look_at(position, target, up=(0.0, 1.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera (R, t) for a camera at `position` looking at `target`.

    Image y runs along world `up` (y-down image convention), so with the
    default up the world +y axis points down the image.
    """
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - position
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise InvalidInputError("camera position coincides with target")
    z = fwd / n
    up = np.asarray(up, dtype=np.float64)
    y = up - np.dot(up, z) * z
    ny = np.linalg.norm(y)
    if ny < 1e-12:
        raise InvalidInputError("up vector parallel to viewing direction")
    y = y / ny
    x = np.cross(y, z)
    rot = np.stack([x, y, z], axis=0)
    return rot, -rot @ position
