"""Scene directory serialization: a JSON manifest plus PFM attribute maps.

Float maps are stored as PFM so save/load round trips are bit exact.
The 6-channel feature logits are stored as a single-channel PFM with the
channels stacked vertically (height = 6 * H). Invalid depth pixels are
stored as 0 and recovered as the validity mask.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import imageio
from .errors import DataError
from .scene import CameraModel, InputView, Scene

__all__ = ["save_scene", "load_scene", "MANIFEST_NAME", "MANIFEST_VERSION"]

MANIFEST_NAME = "scene.json"
MANIFEST_VERSION = 1


def save_scene(scene: Scene, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    views = []
    for v in scene.views:
        base = f"view_{v.id:03d}"
        imageio.write_pfm(directory / f"{base}_color.pfm", v.color)
        imageio.write_pfm(
            directory / f"{base}_depth.pfm", np.where(v.valid, v.depth, 0.0)
        )
        imageio.write_pfm(directory / f"{base}_normal.pfm", v.normal)
        imageio.write_pfm(
            directory / f"{base}_uncertainty.pfm", v.uncertainty_logit
        )
        h, w = v.camera.height, v.camera.width
        feat = np.transpose(v.feature_logit, (2, 0, 1)).reshape(6 * h, w)
        imageio.write_pfm(directory / f"{base}_features.pfm", feat)
        cam = v.camera
        views.append(
            {
                "id": v.id,
                "width": cam.width,
                "height": cam.height,
                "fx": cam.fx,
                "fy": cam.fy,
                "cx": cam.cx,
                "cy": cam.cy,
                "rotation": cam.rotation.ravel().tolist(),
                "translation": cam.translation.tolist(),
                "colorFile": f"{base}_color.pfm",
                "depthFile": f"{base}_depth.pfm",
                "normalFile": f"{base}_normal.pfm",
                "uncertaintyFile": f"{base}_uncertainty.pfm",
                "featureFile": f"{base}_features.pfm",
                "mu": v.mu,
            }
        )
    manifest = {
        "version": MANIFEST_VERSION,
        "backgroundColor": scene.background_color.tolist(),
        "depthSigma": "auto" if scene.depth_sigma is None else scene.depth_sigma,
        "rngSeed": scene.rng_seed,
        "views": views,
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    return directory


def _require(entry: dict, key: str, path):
    if key not in entry:
        raise DataError(f"{path}: manifest entry missing required key {key!r}")
    return entry[key]


def _load_map(directory: Path, name: str, shape, what: str):
    path = directory / name
    if not path.exists():
        raise DataError(f"{what} file {path} referenced by manifest does not exist")
    data = imageio.read_pfm(path)
    if data.shape != shape:
        raise DataError(
            f"{path}: {what} map has shape {data.shape}, manifest declares {shape}"
        )
    return data


def load_scene(directory) -> Scene:
    directory = Path(directory)
    mpath = directory / MANIFEST_NAME
    if not mpath.exists():
        raise DataError(f"no manifest {mpath}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{mpath}: invalid JSON at byte {e.pos}: {e.msg}") from None
    if manifest.get("version") != MANIFEST_VERSION:
        raise DataError(f"{mpath}: unsupported manifest version {manifest.get('version')}")

    views = []
    seen = set()
    for entry in manifest.get("views", []):
        vid = int(_require(entry, "id", mpath))
        if vid in seen:
            raise DataError(f"{mpath}: duplicate view id {vid}")
        seen.add(vid)
        w = int(_require(entry, "width", mpath))
        h = int(_require(entry, "height", mpath))
        rotation = np.array(_require(entry, "rotation", mpath), dtype=np.float64)
        if rotation.size != 9:
            raise DataError(f"{mpath}: view {vid} rotation must have 9 numbers")
        translation = np.array(_require(entry, "translation", mpath), dtype=np.float64)
        if translation.size != 3:
            raise DataError(f"{mpath}: view {vid} translation must have 3 numbers")
        cam = CameraModel(
            width=w, height=h,
            fx=float(_require(entry, "fx", mpath)),
            fy=float(_require(entry, "fy", mpath)),
            cx=float(_require(entry, "cx", mpath)),
            cy=float(_require(entry, "cy", mpath)),
            rotation=rotation.reshape(3, 3),
            translation=translation,
        )
        color = _load_map(directory, _require(entry, "colorFile", mpath), (h, w, 3), "color")
        depth = _load_map(directory, _require(entry, "depthFile", mpath), (h, w), "depth")
        normal = _load_map(directory, _require(entry, "normalFile", mpath), (h, w, 3), "normal")
        valid = depth > 0
        if "uncertaintyFile" in entry:
            unc = _load_map(directory, entry["uncertaintyFile"], (h, w), "uncertainty")
        else:
            unc = np.full((h, w), np.log(0.5))
        if "featureFile" in entry:
            feat = _load_map(directory, entry["featureFile"], (6 * h, w), "feature")
            feat = np.transpose(feat.reshape(6, h, w), (1, 2, 0))
        else:
            feat = np.zeros((h, w, 6))
        views.append(
            InputView(
                id=vid, camera=cam, color=color, depth=depth, valid=valid,
                normal=normal, uncertainty_logit=unc, feature_logit=feat,
                mu=float(entry.get("mu", 1.0)),
            )
        )
    if not views:
        raise DataError(f"{mpath}: manifest declares no views")
    sigma = manifest.get("depthSigma", "auto")
    return Scene(
        views=views,
        background_color=np.array(manifest.get("backgroundColor", [0, 0, 0])),
        depth_sigma=None if sigma == "auto" else float(sigma),
        rng_seed=int(manifest.get("rngSeed", 0)),
    )
