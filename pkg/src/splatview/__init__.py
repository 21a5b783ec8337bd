"""Differentiable multi-view point-splatting toolkit."""

from .scene import (
    CameraModel,
    InputView,
    Scene,
    apply_harmonization,
    lift_pixel,
    look_at,
    project_point,
)
from .renderer import LinearHead, NovelRender, RenderOptions, render_novel

__all__ = [
    "CameraModel",
    "InputView",
    "Scene",
    "apply_harmonization",
    "lift_pixel",
    "look_at",
    "project_point",
    "LinearHead",
    "NovelRender",
    "RenderOptions",
    "render_novel",
]

__version__ = "0.1.0"
