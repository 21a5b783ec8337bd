"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import camselect, imageio, optim, sceneio, synth
from .errors import DataError, InvalidInputError, SplatViewError
from .renderer import LinearHead, RenderOptions, render_novel
from .scene import CameraModel


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _load_pose(path) -> tuple[np.ndarray, np.ndarray]:
    """Pose file: JSON with rotation (9 numbers, row-major) and translation (3)."""
    try:
        data = json.loads(Path(path).read_text())
        rotation = np.array(data["rotation"], dtype=np.float64).reshape(3, 3)
        translation = np.array(data["translation"], dtype=np.float64).reshape(3)
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read pose file {path}: {e}") from None
    return rotation, translation


def _scene_camera(scene, args) -> CameraModel:
    ref = scene.views[0].camera
    width = args.width or ref.width
    height = args.height or ref.height
    sx, sy = width / ref.width, height / ref.height
    if args.view is not None:
        cam = scene.view_by_id(args.view).camera
    else:
        rot, t = _load_pose(args.pose)
        cam = CameraModel(width=ref.width, height=ref.height, fx=ref.fx, fy=ref.fy,
                          cx=ref.cx, cy=ref.cy, rotation=rot, translation=t)
    return CameraModel(
        width=width, height=height,
        fx=cam.fx * sx, fy=cam.fy * sy, cx=cam.cx * sx, cy=cam.cy * sy,
        rotation=cam.rotation, translation=cam.translation,
    )


def cmd_synth(args):
    spec = synth.SyntheticSpec(
        preset=args.preset, resolution=args.resolution, views=args.views,
        texture=args.texture, depth_noise=args.depth_noise,
        exposure_factors=args.exposure, seed=args.seed,
    )
    scene, truth = synth.gen_synthetic_with_truth(spec)
    out = Path(args.out)
    sceneio.save_scene(scene, out)
    (out / "synthetic_truth.json").write_text(json.dumps(truth, indent=2))
    print(f"wrote {len(scene.views)}-view {args.preset} scene to {out}")
    return 0


def cmd_render(args):
    scene = sceneio.load_scene(args.scene)
    cam = _scene_camera(scene, args)
    options = RenderOptions(k=args.k, fast=args.fast, samples=args.s)
    render = render_novel(scene, cam, options=options)
    imageio.write_ppm(args.out, render.color)
    print(f"rendered {cam.width}x{cam.height} using views {render.selected} "
          f"in {render.stats['millis']:.0f} ms -> {args.out}")
    return 0


def cmd_select(args):
    scene = sceneio.load_scene(args.scene)
    rot, t = _load_pose(args.pose)
    ref = scene.views[0].camera
    cam = CameraModel(width=ref.width, height=ref.height, fx=ref.fx, fy=ref.fy,
                      cx=ref.cx, cy=ref.cy, rotation=rot, translation=t)
    maps = camselect.score_maps(scene.views, cam)
    selected = camselect.select_cameras(maps, min(args.k, len(scene.views)))
    grids = {m.view_id: m.grid for m in maps}
    coverage = float(np.maximum.reduce([grids[v] for v in selected]).sum())
    print(json.dumps({"selected": selected, "coverage": coverage}))
    return 0


def cmd_optimize(args):
    scene = sceneio.load_scene(args.scene)
    config = optim.OptimConfig(iterations=args.iters, patch_size=args.patch,
                               seed=args.seed)
    opt = optim.LeaveOneOutOptimizer(scene, config)
    losses = opt.run()
    out = Path(args.out or args.scene)
    sceneio.save_scene(scene, out)
    optim.write_loss_trace(out / "loss_trace.csv", opt.trace)
    if losses:
        print(f"optimized {args.iters} iterations, "
              f"loss {losses[0]:.4f} -> {losses[-1]:.4f}, wrote {out}")
    else:
        print(f"no iterations requested, wrote unchanged scene to {out}")
    return 0


def cmd_harmonize(args):
    scene = sceneio.load_scene(args.scene)
    config = optim.OptimConfig(seed=args.seed)
    mu, trace = optim.harmonize(scene, config, iterations=args.iters)
    out = Path(args.out or args.scene)
    sceneio.save_scene(scene, out)
    optim.write_loss_trace(out / "harmonize_trace.csv", trace)
    print("mu: " + " ".join(f"{m:.4f}" for m in mu))
    return 0


def cmd_serve(args):
    from .server import serve
    scene = sceneio.load_scene(args.scene)
    serve(scene, args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="splatview", description="Multi-view point splatting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--preset", default="textured-plane", choices=synth.PRESETS)
    p.add_argument("--views", type=int, default=3)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--texture", default="value-noise", choices=synth.TEXTURES)
    p.add_argument("--depth-noise", type=float, default=0.0)
    p.add_argument("--exposure", type=float, nargs="*", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("render", help="render a novel view")
    p.add_argument("--scene", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--pose", help="JSON pose file")
    group.add_argument("--view", type=int, help="render a stored view's pose")
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--fast", action="store_true")
    p.add_argument("--k", type=int, default=9)
    p.add_argument("--s", type=int, default=1, help="depth-test samples")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("select", help="print the selected camera set as JSON")
    p.add_argument("--scene", required=True)
    p.add_argument("--pose", required=True)
    p.add_argument("--k", type=int, default=9)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("optimize", help="leave-one-out attribute optimization")
    p.add_argument("--scene", required=True)
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patch", type=int, default=150)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("harmonize", help="optimize per-view exposure")
    p.add_argument("--scene", required=True)
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_harmonize)

    p = sub.add_parser("serve", help="HTTP render server for the viewer")
    p.add_argument("--scene", required=True)
    p.add_argument("--port", type=int, default=8090)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as e:
        sys.stderr.write(f"data error: {e}\n")
        return 2
    except InvalidInputError as e:
        sys.stderr.write(f"error: {e}\n")
        return 1
    except SplatViewError as e:
        sys.stderr.write(f"error: {e}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
