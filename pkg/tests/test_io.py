import json
import struct

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from adgs.config import RunConfig, apply_ablation, config_from_dict, load_config
from adgs.errors import CheckpointError, InvalidParameterError, SceneLoadError
from adgs.io.checkpoint import HEADER_SIZE, load_checkpoint, save_checkpoint
from adgs.io.images import read_pfm, read_png, write_pfm, write_png
from adgs.io.ply import read_ply, write_ply
from adgs.io.scene import (INIT_OPACITY, RANDOM_INIT_COUNT, SceneDataset, init_cloud,
                           knn_mean_distance, load_scene, save_scene, spiral_cameras)
from adgs.io.synth import flat_card_cloud, layered_boxes_cloud, synth_scene
from adgs.optim import OptimizerState
from adgs.raster import render
from adgs.scene_model import Camera, sigmoid

RNG = np.random.default_rng


@pytest.fixture(scope="module")
def card():
    return synth_scene("flat-card", RNG(0))


class TestFiles:
    def test_pfm_roundtrip(self, tmp_path):
        img = RNG(0).uniform(size=(7, 5, 3)).astype(np.float32)
        dep = RNG(1).uniform(1, 9, size=(7, 5)).astype(np.float32)
        write_pfm(tmp_path / "a.pfm", img)
        write_pfm(tmp_path / "d.pfm", dep)
        np.testing.assert_array_equal(read_pfm(tmp_path / "a.pfm"), img)
        np.testing.assert_array_equal(read_pfm(tmp_path / "d.pfm"), dep)

    def test_png_roundtrip(self, tmp_path):
        img = RNG(2).integers(0, 256, size=(6, 9, 3)) / 255.0
        write_png(tmp_path / "a.png", img)
        np.testing.assert_array_equal(read_png(tmp_path / "a.png"), img)

    def test_ply_roundtrip(self, tmp_path):
        pts = RNG(3).normal(size=(20, 3)).astype(np.float32)
        rgb = RNG(4).integers(0, 256, size=(20, 3)) / 255.0
        write_ply(tmp_path / "p.ply", pts, rgb)
        p, c = read_ply(tmp_path / "p.ply")
        np.testing.assert_array_equal(p, pts)
        np.testing.assert_array_equal(c, rgb)

    def test_ascii_ply(self, tmp_path):
        (tmp_path / "a.ply").write_text(
            "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
            "property float z\nend_header\n0 1 2\n3 4 5\n")
        p, c = read_ply(tmp_path / "a.ply")
        np.testing.assert_array_equal(p, [[0, 1, 2], [3, 4, 5]])
        assert np.all(c == 0.5)

    def test_bad_pfm(self, tmp_path):
        (tmp_path / "x.pfm").write_bytes(b"P6\n1 1\n255\n\0\0\0")
        with pytest.raises(SceneLoadError):
            read_pfm(tmp_path / "x.pfm")


class TestCheckpoint:
    def trained_like(self, n=6):
        cloud = init_cloud(synth_scene("flat-card", RNG(0))[0], RNG(1))
        cloud = cloud.select(np.arange(n))
        opt = OptimizerState.for_cloud(cloud)
        r = RNG(2)
        for buf in (opt.exp_avg, opt.exp_avg_sq):
            for k in buf:
                buf[k][:] = r.normal(size=buf[k].shape)
        opt.step = 17
        return cloud, opt

    def test_save_load_save_identical(self, tmp_path):
        cloud, opt = self.trained_like()
        save_checkpoint(tmp_path / "a.ckpt", cloud, opt, 42)
        c2, o2, it = load_checkpoint(tmp_path / "a.ckpt")
        save_checkpoint(tmp_path / "b.ckpt", c2, o2, it)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        assert it == 42 and o2.step == 17
        for k, v in cloud.params().items():
            np.testing.assert_array_equal(getattr(c2, k), v)
            np.testing.assert_array_equal(o2.exp_avg_sq[k], opt.exp_avg_sq[k])

    @pytest.mark.parametrize("n", [0, 1, 13])
    def test_byte_size(self, tmp_path, n):
        cloud, opt = self.trained_like(n)
        # header: magic 8 + 4 u32 + 3 u64 + 3 f64 background = 72 bytes
        record = 3 + 3 + 4 + 1 + 3  # floats per Gaussian at degree 0
        assert HEADER_SIZE == 72
        save_checkpoint(tmp_path / "m.ckpt", cloud, opt)
        assert (tmp_path / "m.ckpt").stat().st_size == 72 + n * record * 4 + 2 * n * record * 8
        save_checkpoint(tmp_path / "p.ckpt", cloud)
        assert (tmp_path / "p.ckpt").stat().st_size == 72 + n * record * 4

    def test_after_prune(self, tmp_path):
        cloud, opt = self.trained_like(6)
        keep = np.array([0, 2, 5])
        opt.select(keep)
        save_checkpoint(tmp_path / "p.ckpt", cloud.select(keep), opt)
        c2, o2, _ = load_checkpoint(tmp_path / "p.ckpt")
        assert len(c2) == 3 and len(o2) == 3
        np.testing.assert_array_equal(c2.mu, cloud.mu[keep])

    def test_version_mismatch(self, tmp_path):
        cloud, opt = self.trained_like(2)
        path = save_checkpoint(tmp_path / "v.ckpt", cloud, opt)
        raw = bytearray(path.read_bytes())
        raw[8:12] = struct.pack("<I", 99)
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version 99"):
            load_checkpoint(path)

    def test_truncated_and_foreign(self, tmp_path):
        (tmp_path / "t.ckpt").write_bytes(b"ADGS")
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "t.ckpt")
        (tmp_path / "f.ckpt").write_bytes(b"X" * 100)
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "f.ckpt")


def write_manifest(root, frames, **extra):
    (root / "img").mkdir(exist_ok=True)
    for i, f in enumerate(frames):
        write_png(root / "img" / f"{i}.png", np.zeros((f["height"], f["width"], 3)))
        f.setdefault("image", f"img/{i}.png")
    (root / "manifest.json").write_text(json.dumps({"frames": frames, **extra}))


def frame(i=0, R=None):
    R = np.eye(3) if R is None else R
    rt = np.hstack([R, [[0.1 * i], [0], [3]]])
    return {"fx": 20, "fy": 20, "cx": 4, "cy": 3, "width": 8, "height": 6,
            "world_to_camera": rt.tolist()}


class TestScene:
    def test_every_eighth_split(self, tmp_path):
        write_manifest(tmp_path, [frame(i) for i in range(16)])
        ds = load_scene(tmp_path)
        assert ds.test_idx == [0, 8] and len(ds.train_idx) == 14

    def test_non_orthonormal_reports_index(self, tmp_path):
        frames = [frame(i) for i in range(4)]
        frames[2] = frame(2, np.diag([1.0, 1.0, 1.01]))
        write_manifest(tmp_path, frames)
        with pytest.raises(SceneLoadError, match="camera index 2"):
            load_scene(tmp_path)

    def test_missing_field_named(self, tmp_path):
        frames = [frame(i) for i in range(2)]
        del frames[1]["fy"]
        write_manifest(tmp_path, frames)
        with pytest.raises(SceneLoadError, match="frame 1: missing field 'fy'"):
            load_scene(tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(SceneLoadError):
            load_scene(tmp_path)

    def test_random_init_without_points(self, tmp_path):
        write_manifest(tmp_path, [frame(i) for i in range(3)])
        ds = load_scene(tmp_path)
        assert ds.points is None
        cloud = init_cloud(ds, RNG(0))
        assert len(cloud) == RANDOM_INIT_COUNT

    def test_roundtrip_bit_exact(self, card, tmp_path):
        ds, _ = card
        save_scene(ds, tmp_path)
        back = load_scene(tmp_path)
        assert back.train_idx == ds.train_idx and back.test_idx == ds.test_idx
        for a, b in zip(ds.images, back.images):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(ds.depths, back.depths):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(back.points, ds.points)
        np.testing.assert_array_equal(back.point_colors, ds.point_colors)
        for a, b in zip(ds.cameras, back.cameras):
            np.testing.assert_array_equal(a.world_to_camera, b.world_to_camera)


class TestInit:
    def dataset(self, points):
        cam = Camera.look_at([0, 0, -3.0], [0, 0, 0], fx=20, width=8, height=8)
        pts = np.asarray(points, float)
        return SceneDataset([cam], [np.zeros((8, 8, 3))], [0], [], points=pts,
                            point_colors=np.full((len(pts), 3), 0.5))

    def test_two_points_unit_distance(self):
        cloud = init_cloud(self.dataset([[0, 0, 0], [1, 0, 0]]), RNG(0), dtype=np.float64)
        np.testing.assert_array_equal(cloud.log_scale, 0.0)

    def test_init_opacity(self):
        cloud = init_cloud(self.dataset(RNG(0).normal(size=(30, 3))), RNG(0), dtype=np.float64)
        np.testing.assert_allclose(cloud.opacity, INIT_OPACITY, rtol=1e-15)
        assert sigmoid(cloud.opacity_logit[0]) == pytest.approx(0.1, abs=1e-16)

    def test_knn_matches_all_pairs(self):
        pts = RNG(5).normal(size=(50, 3))
        d = cdist(pts, pts)
        np.fill_diagonal(d, np.inf)
        oracle = np.sort(d, axis=1)[:, :3].mean(axis=1)
        np.testing.assert_allclose(knn_mean_distance(pts), oracle, rtol=1e-12)


class TestSynth:
    def test_sizes(self, card):
        ds, gt = card
        assert len(gt) == 25 and len(ds.train_idx) == 8 and len(ds.test_idx) == 2
        boxes, gt_boxes = synth_scene("layered-boxes", RNG(0))
        assert len(gt_boxes) == 50 and len(boxes.train_idx) == 12 and len(boxes.test_idx) == 4
        assert all(img.shape == (64, 64, 3) for img in boxes.images)

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            synth_scene("teapot", RNG(0))

    @pytest.mark.parametrize("eye", [(0.5, 0.3, 4.0), (-0.7, 0.2, 5.0), (0.0, -0.4, 3.0)])
    def test_flat_card_mirror_symmetry(self, eye):
        # reflecting the camera through the card plane z = 0 mirrors the image left-right
        cloud = flat_card_cloud()
        front = Camera.look_at([eye[0], eye[1], -eye[2]], [0, 0, 0], fx=80, width=64, height=64)
        back = Camera.look_at([eye[0], eye[1], eye[2]], [0, 0, 0], fx=80, width=64, height=64)
        a, b = render(cloud, front), render(cloud, back)
        assert np.max(np.abs(a.color - b.color[:, ::-1])) <= 1e-6
        assert np.max(np.abs(a.depth - b.depth[:, ::-1])) <= 1e-6

    def test_layered_boxes_depth_per_layer(self):
        cloud = layered_boxes_cloud()
        cam = Camera.look_at([0, 0, -5.0], [0, 0, 0], fx=96, width=64, height=64)
        layers = {6.5: range(0, 25), 5.2: range(25, 41), 4.1: range(41, 50)}
        for z, idx in layers.items():
            out = render(cloud.select(list(idx)), cam)
            m = out.accum_alpha > 1e-3
            np.testing.assert_allclose(out.depth[m] / out.accum_alpha[m], z, rtol=1e-9)
        full = render(cloud, cam)
        m = full.accum_alpha > 0.99
        norm = full.depth[m] / full.accum_alpha[m]
        assert norm.min() >= 4.1 - 1e-9 and norm.max() <= 6.5 + 1e-9
        hist, edges = np.histogram(norm, bins=np.arange(3.975, 6.6, 0.05))
        modes = sorted(edges[np.argsort(hist)[-2:]] + 0.025)
        assert modes == pytest.approx([4.1, 5.2], abs=0.06)

    def test_deterministic(self):
        a, _ = synth_scene("textured-sphere-field", RNG(9))
        b, _ = synth_scene("textured-sphere-field", RNG(9))
        for x, y in zip(a.images, b.images):
            np.testing.assert_array_equal(x, y)
        np.testing.assert_array_equal(a.points, b.points)


class TestSpiral:
    def test_cameras_valid_and_aimed(self, card):
        ds, _ = card
        cams = spiral_cameras(ds.train_cameras, 12)
        assert len(cams) == 12
        for c in cams:
            assert np.max(np.abs(c.rotation @ c.rotation.T - np.eye(3))) <= 1e-9
            t = c.rotation @ np.zeros(3) + c.translation
            assert t[2] > 0 and abs(t[0]) < 1e-9 and abs(t[1]) < 1e-9
        assert len({tuple(np.round(c.center, 9)) for c in cams}) == 12

    def test_rejects_empty(self):
        with pytest.raises(InvalidParameterError):
            spiral_cameras([], 3)


class TestConfig:
    def test_table_defaults(self):
        c = RunConfig()
        s, d, w = c.schedule, c.densify, c.loss
        assert (s.warmup_iters, s.low_iters, s.high_iters, s.total_iters) == (1500, 100, 100, 10000)
        assert (d.low_opacity_threshold, d.low_grad_threshold) == (0.1, 0.0005)
        assert (d.high_opacity_threshold, d.high_grad_threshold) == (0.005, 0.0002)
        assert (w.lambda1, w.lambda2, w.lambda3, w.lambda_r, w.omega1, w.omega2) == \
            (1.0, 1.0, 1.0, 0.001, 0.01, 0.05)

    def test_yaml_and_unknown_keys(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("seed: 4\nschedule:\n  total_iters: 2000\nablation: D\n")
        c = load_config(p)
        assert c.seed == 4 and c.schedule.total_iters == 2000 and c.loss.lambda3 == 0.0
        with pytest.raises(InvalidParameterError, match="bogus"):
            config_from_dict({"schedule": {"bogus": 1}})

    @pytest.mark.parametrize("name, check", [
        ("A", lambda c: c.densify_schedule == "single" and c.loss_schedule == "alternating"),
        ("B", lambda c: c.loss_schedule == "photometric" and c.densify_schedule == "alternating"),
        ("E", lambda c: not c.loss.smoothness_term and c.loss.lambda_r == 0.001),
        ("F", lambda c: c.loss.lambda2 == 0.0),
    ])
    def test_ablations(self, name, check):
        assert check(apply_ablation(RunConfig(), name))

    def test_unknown_ablation(self):
        with pytest.raises(InvalidParameterError):
            apply_ablation(RunConfig(), "Z")
