"""HTTP render server consumed by the browser viewer.

Endpoints (JSON bodies, UTF-8):

* ``GET /api/cameras`` -- camera list from the scene manifest.
* ``POST /api/render`` -- body {rotation: [9], translation: [3], width,
  height, k?, fast?, s?}; responds with PNG bytes plus headers
  ``X-Selected-Views`` and ``X-Render-Millis``.
* ``GET /api/weights?...`` -- same pose parameters in the query string;
  responds {viewId: meanWeight} over the selected views.

The scene is immutable while serving; renders are serialized through a
lock so concurrent requests queue FIFO.
"""

from __future__ import annotations

import io
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np
from PIL import Image

from .errors import SplatViewError
from .imageio import float_to_u8
from .renderer import RenderOptions, render_novel
from .scene import CameraModel, Scene

__all__ = ["make_server", "serve"]


def _parse_pose(params: dict, scene: Scene):
    try:
        rotation = np.array(params["rotation"], dtype=np.float64)
        translation = np.array(params["translation"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as e:
        raise ValueError(f"missing or malformed pose: {e}") from None
    if rotation.size != 9:
        raise ValueError(f"rotation must have 9 numbers, got {rotation.size}")
    if translation.size != 3:
        raise ValueError(f"translation must have 3 numbers, got {translation.size}")
    ref = scene.views[0].camera
    width = int(params.get("width", ref.width))
    height = int(params.get("height", ref.height))
    sx, sy = width / ref.width, height / ref.height
    cam = CameraModel(
        width=width, height=height,
        fx=ref.fx * sx, fy=ref.fy * sy, cx=ref.cx * sx, cy=ref.cy * sy,
        rotation=rotation.reshape(3, 3), translation=translation,
    )
    options = RenderOptions(
        k=int(params.get("k", 9)),
        fast=bool(params.get("fast", False)),
        samples=int(params.get("s", 1)),
    )
    return cam, options


def _query_params(query: str) -> dict:
    qs = parse_qs(query)
    params = {}
    for key, values in qs.items():
        raw = values[0]
        if key in ("rotation", "translation"):
            params[key] = [float(x) for x in raw.split(",")]
        elif key == "fast":
            params[key] = raw.lower() in ("1", "true", "yes")
        else:
            params[key] = raw
    return params


def make_server(scene: Scene, port: int) -> ThreadingHTTPServer:
    render_lock = threading.Lock()

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _send_json(self, status: int, payload):
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Access-Control-Expose-Headers",
                             "X-Selected-Views, X-Render-Millis")
            self.end_headers()

        def do_GET(self):
            url = urlparse(self.path)
            if url.path == "/api/cameras":
                cams = [
                    {
                        "id": v.id,
                        "width": v.camera.width,
                        "height": v.camera.height,
                        "fx": v.camera.fx, "fy": v.camera.fy,
                        "cx": v.camera.cx, "cy": v.camera.cy,
                        "rotation": v.camera.rotation.ravel().tolist(),
                        "translation": v.camera.translation.tolist(),
                    }
                    for v in scene.views
                ]
                self._send_json(200, cams)
            elif url.path == "/api/weights":
                try:
                    cam, options = _parse_pose(_query_params(url.query), scene)
                except ValueError as e:
                    self._send_json(400, {"error": str(e)})
                    return
                try:
                    with render_lock:
                        render = render_novel(scene, cam, options=options)
                except SplatViewError as e:
                    self._send_json(500, {"error": str(e)})
                    return
                weights = {
                    str(vid): float(np.mean(wmap))
                    for vid, wmap in render.per_view_weights.items()
                }
                self._send_json(200, weights)
            else:
                self._send_json(404, {"error": f"no route {url.path}"})

        def do_POST(self):
            url = urlparse(self.path)
            if url.path != "/api/render":
                self._send_json(404, {"error": f"no route {url.path}"})
                return
            try:
                length = int(self.headers.get("Content-Length", 0))
                params = json.loads(self.rfile.read(length).decode("utf-8"))
                cam, options = _parse_pose(params, scene)
            except (ValueError, json.JSONDecodeError) as e:
                self._send_json(400, {"error": str(e)})
                return
            try:
                with render_lock:
                    render = render_novel(scene, cam, options=options)
            except SplatViewError as e:
                self._send_json(500, {"error": str(e)})
                return
            buf = io.BytesIO()
            Image.fromarray(float_to_u8(render.color)).save(buf, format="PNG")
            data = buf.getvalue()
            self.send_response(200)
            self.send_header("Content-Type", "image/png")
            self.send_header("Content-Length", str(len(data)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Expose-Headers",
                             "X-Selected-Views, X-Render-Millis")
            self.send_header("X-Selected-Views",
                             ",".join(str(v) for v in render.selected))
            self.send_header("X-Render-Millis", f"{render.stats['millis']:.1f}")
            self.end_headers()
            self.wfile.write(data)

    return ThreadingHTTPServer(("127.0.0.1", port), Handler)


def serve(scene: Scene, port: int):
    server = make_server(scene, port)
    bound = server.server_address[1]
    print(f"serving on http://127.0.0.1:{bound}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
