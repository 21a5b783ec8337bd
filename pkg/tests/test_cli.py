"""Command-line interface: exit codes, outputs, and file formats."""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from splatview import cli, imageio, sceneio

from conftest import psnr


def run(argv):
    return cli.main(argv)


def make_scene(tmp_path, *extra, res=32, views=3):
    out = tmp_path / "scene"
    code = run(["synth", "--resolution", str(res), "--views", str(views),
                "--out", str(out), *extra])
    assert code == 0
    return out


def pose_file(tmp_path, cam):
    path = tmp_path / "pose.json"
    path.write_text(json.dumps({
        "rotation": cam.rotation.ravel().tolist(),
        "translation": cam.translation.tolist(),
    }))
    return path


class TestSynth:
    def test_writes_scene_and_truth(self, tmp_path, capsys):
        out = make_scene(tmp_path)
        assert (out / sceneio.MANIFEST_NAME).exists()
        truth = json.loads((out / "synthetic_truth.json").read_text())
        assert truth["mu"] == [1.0, 1.0, 1.0]
        assert "3-view" in capsys.readouterr().out
        scene = sceneio.load_scene(out)
        assert len(scene.views) == 3

    def test_exposure_written_to_truth(self, tmp_path):
        out = make_scene(tmp_path, "--exposure", "1.0", "1.3", views=2)
        truth = json.loads((out / "synthetic_truth.json").read_text())
        assert truth["mu"] == [1.0, 1.3]

    def test_bad_resolution_is_usage_error(self, tmp_path):
        code = run(["synth", "--resolution", "4", "--out", str(tmp_path / "s")])
        assert code == 1


class TestRender:
    def test_stored_view_pose_high_psnr(self, tmp_path):
        out = make_scene(tmp_path, res=128, views=1)
        img = tmp_path / "render.ppm"
        code = run(["render", "--scene", str(out), "--view", "0",
                    "--out", str(img)])
        assert code == 0
        rendered = imageio.read_ppm(img)
        scene = sceneio.load_scene(out)
        assert psnr(rendered, scene.views[0].color) >= 40.0

    def test_pose_file_render(self, tmp_path):
        out = make_scene(tmp_path)
        scene = sceneio.load_scene(out)
        pose = pose_file(tmp_path, scene.views[1].camera)
        img = tmp_path / "render.ppm"
        code = run(["render", "--scene", str(out), "--pose", str(pose),
                    "--width", "24", "--height", "16", "--out", str(img)])
        assert code == 0
        assert imageio.read_ppm(img).shape == (16, 24, 3)

    def test_fast_flag(self, tmp_path):
        out = make_scene(tmp_path)
        img = tmp_path / "fast.ppm"
        code = run(["render", "--scene", str(out), "--view", "0", "--fast",
                    "--out", str(img)])
        assert code == 0
        assert img.exists()

    def test_missing_scene_is_data_error(self, tmp_path):
        code = run(["render", "--scene", str(tmp_path / "nope"), "--view", "0",
                    "--out", str(tmp_path / "x.ppm")])
        assert code == 2

    def test_malformed_pose_is_data_error(self, tmp_path):
        out = make_scene(tmp_path)
        pose = tmp_path / "pose.json"
        pose.write_text(json.dumps({"rotation": [1.0] * 8,
                                    "translation": [0.0] * 3}))
        code = run(["render", "--scene", str(out), "--pose", str(pose),
                    "--out", str(tmp_path / "x.ppm")])
        assert code == 2

    def test_pose_and_view_conflict_is_usage_error(self, tmp_path):
        out = make_scene(tmp_path)
        with pytest.raises(SystemExit) as exc:
            run(["render", "--scene", str(out), "--view", "0",
                 "--pose", "p.json", "--out", str(tmp_path / "x.ppm")])
        assert exc.value.code == 1


class TestSelect:
    def test_prints_selection_json(self, tmp_path, capsys):
        out = make_scene(tmp_path, views=4)
        scene = sceneio.load_scene(out)
        pose = pose_file(tmp_path, scene.views[2].camera)
        capsys.readouterr()  # drop the synth command's output
        code = run(["select", "--scene", str(out), "--pose", str(pose),
                    "--k", "2"])
        assert code == 0
        data = json.loads(capsys.readouterr().out)
        assert len(data["selected"]) == 2
        assert set(data["selected"]) <= {0, 1, 2, 3}
        assert data["coverage"] > 0


class TestOptimize:
    def test_zero_iterations_round_trips_scene(self, tmp_path, capsys):
        out = make_scene(tmp_path)
        before = sceneio.load_scene(out)
        dst = tmp_path / "optimized"
        code = run(["optimize", "--scene", str(out), "--iters", "0",
                    "--out", str(dst)])
        assert code == 0
        assert "unchanged" in capsys.readouterr().out
        after = sceneio.load_scene(dst)
        for a, b in zip(before.views, after.views):
            assert np.array_equal(a.color, b.color)
            assert np.array_equal(a.depth, b.depth)
        assert not (dst / "loss_trace.csv").exists()

    def test_iterations_write_loss_trace(self, tmp_path):
        out = make_scene(tmp_path)
        dst = tmp_path / "optimized"
        code = run(["optimize", "--scene", str(out), "--iters", "2",
                    "--patch", "16", "--out", str(dst)])
        assert code == 0
        with open(dst / "loss_trace.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 2
        assert all(np.isfinite(float(r["loss"])) for r in rows)


class TestHarmonize:
    def test_prints_mu(self, tmp_path, capsys):
        out = make_scene(tmp_path, res=16, views=2)
        capsys.readouterr()  # drop the synth command's output
        code = run(["harmonize", "--scene", str(out), "--iters", "3"])
        assert code == 0
        line = capsys.readouterr().out
        assert line.startswith("mu:")
        assert len(line.split()) == 3
        assert (out / "harmonize_trace.csv").exists()


class TestUsage:
    def test_no_command_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            run([])
        assert exc.value.code == 1

    def test_unknown_command_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            run(["frobnicate"])
        assert exc.value.code == 1

    def test_module_invocation(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "splatview.cli", "synth",
             "--resolution", "16", "--views", "1",
             "--out", str(tmp_path / "s")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "1-view" in proc.stdout
