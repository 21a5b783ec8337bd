"""Shared fixtures and scene builders for the test suite."""

import numpy as np
import pytest

from splatview.scene import CameraModel, look_at
from splatview.synth import SyntheticSpec, gen_synthetic


def arc_camera(theta: float, resolution: int, elevation: float = -0.3,
               radius: float = 3.5) -> CameraModel:
    """Camera on the synthetic generator's viewing arc, looking at the origin."""
    pos = np.array([radius * np.sin(theta), elevation, -radius * np.cos(theta)])
    rot, t = look_at(pos, (0.0, 0.0, 0.0))
    fx = 0.8 * resolution
    return CameraModel(
        width=resolution, height=resolution, fx=fx, fy=fx,
        cx=(resolution - 1) / 2.0, cy=(resolution - 1) / 2.0,
        rotation=rot, translation=t,
    )


@pytest.fixture
def plane_scene_1view():
    return gen_synthetic(SyntheticSpec(preset="textured-plane", resolution=32,
                                       views=1))


@pytest.fixture
def walls_scene_3view():
    return gen_synthetic(SyntheticSpec(preset="two-walls", resolution=32,
                                       views=3))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)
