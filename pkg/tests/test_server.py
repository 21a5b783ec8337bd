"""HTTP render server endpoints against a live threaded server."""

import io
import json
import threading
import urllib.error
import urllib.request

import numpy as np
import pytest
from PIL import Image

from splatview.server import make_server
from splatview.synth import SyntheticSpec, gen_synthetic

from conftest import psnr


@pytest.fixture(scope="module")
def scene():
    return gen_synthetic(
        SyntheticSpec(preset="textured-plane", resolution=128, views=3, seed=0)
    )


@pytest.fixture(scope="module")
def base_url(scene):
    server = make_server(scene, 0)
    port = server.server_address[1]
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{port}"
    server.shutdown()


def get(url):
    with urllib.request.urlopen(url, timeout=120) as resp:
        return resp.status, dict(resp.headers), resp.read()


def post(url, payload):
    req = urllib.request.Request(
        url, data=json.dumps(payload).encode(),
        headers={"Content-Type": "application/json"}, method="POST",
    )
    with urllib.request.urlopen(req, timeout=600) as resp:
        return resp.status, dict(resp.headers), resp.read()


def pose_payload(cam, **extra):
    payload = {
        "rotation": cam.rotation.ravel().tolist(),
        "translation": cam.translation.tolist(),
    }
    payload.update(extra)
    return payload


class TestCameras:
    def test_lists_all_views(self, scene, base_url):
        status, headers, body = get(base_url + "/api/cameras")
        assert status == 200
        assert headers["Content-Type"].startswith("application/json")
        cams = json.loads(body)
        assert [c["id"] for c in cams] == [0, 1, 2]
        for c in cams:
            assert len(c["rotation"]) == 9
            assert len(c["translation"]) == 3
            assert c["width"] == 128 and c["height"] == 128
            assert c["fx"] > 0 and c["fy"] > 0

    def test_cors_header_present(self, base_url):
        _, headers, _ = get(base_url + "/api/cameras")
        assert headers["Access-Control-Allow-Origin"] == "*"


class TestRender:
    def test_stored_pose_png_high_psnr(self, scene, base_url):
        # k=1 keeps the render a pure self-reprojection of the stored view
        cam = scene.views[0].camera
        status, headers, body = post(base_url + "/api/render",
                                     pose_payload(cam, k=1))
        assert status == 200
        assert headers["Content-Type"] == "image/png"
        assert headers["X-Selected-Views"] == "0"
        img = np.asarray(Image.open(io.BytesIO(body)), dtype=np.float64) / 255.0
        assert img.shape == (128, 128, 3)
        assert psnr(img, scene.views[0].color) >= 40.0

    def test_selected_views_header(self, scene, base_url):
        cam = scene.views[1].camera
        _, headers, _ = post(base_url + "/api/render",
                             pose_payload(cam, width=32, height=32))
        selected = [int(x) for x in headers["X-Selected-Views"].split(",")]
        assert selected and set(selected) <= {0, 1, 2}
        assert float(headers["X-Render-Millis"]) > 0.0

    def test_size_override(self, scene, base_url):
        cam = scene.views[0].camera
        _, _, body = post(base_url + "/api/render",
                          pose_payload(cam, width=48, height=32))
        img = Image.open(io.BytesIO(body))
        assert img.size == (48, 32)

    def test_fast_mode(self, scene, base_url):
        cam = scene.views[0].camera
        status, _, body = post(base_url + "/api/render",
                               pose_payload(cam, width=32, height=32, fast=True))
        assert status == 200
        assert Image.open(io.BytesIO(body)).size == (32, 32)

    def test_short_rotation_is_400(self, scene, base_url):
        cam = scene.views[0].camera
        payload = pose_payload(cam)
        payload["rotation"] = payload["rotation"][:8]
        with pytest.raises(urllib.error.HTTPError) as exc:
            post(base_url + "/api/render", payload)
        assert exc.value.code == 400
        assert "9" in json.loads(exc.value.read())["error"]

    def test_missing_pose_is_400(self, base_url):
        with pytest.raises(urllib.error.HTTPError) as exc:
            post(base_url + "/api/render", {"width": 32})
        assert exc.value.code == 400

    def test_malformed_json_is_400(self, base_url):
        req = urllib.request.Request(
            base_url + "/api/render", data=b"{nope",
            headers={"Content-Type": "application/json"}, method="POST",
        )
        with pytest.raises(urllib.error.HTTPError) as exc:
            urllib.request.urlopen(req, timeout=60)
        assert exc.value.code == 400


class TestWeights:
    def test_mean_weights_for_pose(self, scene, base_url):
        cam = scene.views[0].camera
        rot = ",".join(str(x) for x in cam.rotation.ravel())
        t = ",".join(str(x) for x in cam.translation)
        status, _, body = get(
            f"{base_url}/api/weights?rotation={rot}&translation={t}"
            "&width=32&height=32"
        )
        assert status == 200
        weights = json.loads(body)
        assert weights
        assert set(weights) <= {"0", "1", "2"}
        assert all(w >= 0.0 for w in weights.values())
        assert sum(weights.values()) > 0.0

    def test_bad_pose_is_400(self, base_url):
        with pytest.raises(urllib.error.HTTPError) as exc:
            get(base_url + "/api/weights?rotation=1,2,3&translation=0,0,0")
        assert exc.value.code == 400


class TestRouting:
    def test_unknown_route_404(self, base_url):
        with pytest.raises(urllib.error.HTTPError) as exc:
            get(base_url + "/api/nothing")
        assert exc.value.code == 404

    def test_options_preflight(self, base_url):
        req = urllib.request.Request(base_url + "/api/render", method="OPTIONS")
        with urllib.request.urlopen(req, timeout=60) as resp:
            assert resp.status == 204
            assert "X-Selected-Views" in resp.headers["Access-Control-Expose-Headers"]
