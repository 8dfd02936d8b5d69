"""Synthetic scenes rendered by the engine itself (exact images and depths)."""

from __future__ import annotations

import numpy as np

from ..raster import render
from ..scene_model import Camera, GaussianCloud, build_covariance, logit, rgb_to_sh0
from .scene import SceneDataset

PRESETS = ("flat-card", "layered-boxes", "textured-sphere-field")
IMAGE_SIZE = 64
POINTS_PER_GAUSSIAN = 6  # noisy surface samples per ground-truth Gaussian


def _flat_layer(nx, ny, x_range, y_range, z, thickness, colors, opacity=0.97, jitter=None):
    xs = np.linspace(*x_range, nx)
    ys = np.linspace(*y_range, ny)
    gx, gy = np.meshgrid(xs, ys)
    mu = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)], axis=1)
    if jitter is not None:
        mu[:, :2] += jitter
    sx = (x_range[1] - x_range[0]) / max(nx - 1, 1) * 0.75
    sy = (y_range[1] - y_range[0]) / max(ny - 1, 1) * 0.75
    n = len(mu)
    log_scale = np.tile(np.log([sx, sy, thickness]), (n, 1))
    return mu, log_scale, colors(mu), np.full(n, opacity)


def _assemble(parts, background, quat=None) -> GaussianCloud:
    mu = np.concatenate([p[0] for p in parts])
    log_scale = np.concatenate([p[1] for p in parts])
    rgb = np.concatenate([p[2] for p in parts])
    opacity = np.concatenate([p[3] for p in parts])
    n = len(mu)
    if quat is None:
        quat = np.tile([1.0, 0, 0, 0], (n, 1))
    sh = rgb_to_sh0(rgb)[:, None, :]
    return GaussianCloud(mu, log_scale, quat, logit(opacity), sh, background)


def layered_boxes_cloud() -> GaussianCloud:
    """50 Gaussians: a back wall and two rectangular slabs at distinct depths."""
    def wall_colors(mu):
        return np.stack([0.35 + 0.1 * np.tanh(mu[:, 0]), 0.45 + 0.1 * np.tanh(mu[:, 1]),
                         np.full(len(mu), 0.6)], axis=1)

    def mid_colors(mu):
        return np.stack([0.85 + 0.05 * np.sign(mu[:, 0]), 0.55 - 0.1 * mu[:, 1],
                         np.full(len(mu), 0.2)], axis=1)

    def front_colors(mu):
        return np.stack([np.full(len(mu), 0.15), 0.7 + 0.1 * mu[:, 0], 0.35 + 0.1 * mu[:, 1]],
                        axis=1)

    parts = [
        _flat_layer(5, 5, (-2.8, 2.8), (-2.8, 2.8), 1.5, 0.02, wall_colors),  # 25
        _flat_layer(4, 4, (-1.9, -0.1), (-1.4, 0.4), 0.2, 0.02, mid_colors),  # 16
        _flat_layer(3, 3, (0.2, 1.2), (-0.2, 0.8), -0.9, 0.02, front_colors),  # 9
    ]
    return _assemble(parts, np.zeros(3))


def flat_card_cloud() -> GaussianCloud:
    """A planar card at z = 0 whose pattern is mirror-symmetric in x."""
    def colors(mu):
        r = np.abs(mu[:, 0])
        return np.stack([0.2 + 0.5 * r / 1.2, 0.5 + 0.3 * mu[:, 1] / 1.2, 0.6 - 0.3 * r / 1.2], axis=1)

    mu, ls, rgb, op = _flat_layer(5, 5, (-1.2, 1.2), (-1.2, 1.2), 0.0, 1e-3, colors, opacity=0.9)
    return _assemble([(mu, ls, rgb, op)], np.zeros(3))


def sphere_field_cloud(rng: np.random.Generator) -> GaussianCloud:
    """Six textured spheres of small Gaussians (96 total) scattered in depth."""
    centers = np.array([[-1.4, -0.8, 0.6], [0.2, -1.0, 1.4], [1.3, -0.5, 0.0],
                        [-1.0, 0.8, -0.4], [0.4, 0.6, 0.4], [1.5, 1.0, 1.2]])
    radii = np.array([0.6, 0.7, 0.5, 0.55, 0.6, 0.5])
    mus, scales, cols = [], [], []
    for c, r in zip(centers, radii):
        d = rng.normal(size=(16, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        mus.append(c + r * d)
        scales.append(np.full((16, 3), np.log(0.45 * r)))
        base = rng.uniform(0.2, 0.9, 3)
        cols.append(np.clip(base + 0.15 * d, 0, 1))
    mu = np.concatenate(mus)
    n = len(mu)
    parts = [(mu, np.concatenate(scales), np.concatenate(cols), np.full(n, 0.95))]
    return _assemble(parts, np.array([0.05, 0.05, 0.1]))


def camera_rig(n_train: int, n_test: int, *, distance=5.0, spread=(1.0, 0.6), fx=96.0,
               size=IMAGE_SIZE, target=(0.0, 0.0, 0.0)):
    """Forward-facing cameras on a grid (z = -distance) looking at ``target``.

    Returns (cameras, test_mask). Test cameras are interleaved with training ones.
    """
    n = n_train + n_test
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    xs = np.linspace(-spread[0], spread[0], cols)
    ys = np.linspace(-spread[1], spread[1], rows)
    positions = [(x, y) for y in ys for x in xs][:n]
    test_mask = np.zeros(n, dtype=bool)
    if n_test:
        test_mask[np.round(np.linspace(1, n - 2, n_test)).astype(int) if n > 2 else [0]] = True
    cams = [Camera.look_at([x, y, -distance], target, fx=fx, width=size, height=size)
            for x, y in positions]
    return cams, test_mask


def _sparse_points(cloud: GaussianCloud, rng: np.random.Generator,
                   per_gaussian: int = POINTS_PER_GAUSSIAN):
    """Noisy surface samples standing in for a structure-from-motion point cloud."""
    cov = build_covariance(cloud.log_scale, cloud.quat)
    L = np.linalg.cholesky(cov + 1e-12 * np.eye(3))
    idx = np.repeat(np.arange(len(cloud)), per_gaussian)
    z = rng.standard_normal((len(idx), 3))
    pts = cloud.mu[idx] + np.einsum("nij,nj->ni", L[idx], z)
    rgb = np.clip(0.5 + 0.28209479177387814 * cloud.sh[idx, 0, :], 0, 1)
    return pts, rgb


def synth_scene(preset: str, rng: np.random.Generator, n_train: int | None = None,
                n_test: int | None = None, with_points: bool = True,
                points_per_gaussian: int = POINTS_PER_GAUSSIAN):
    """Render a preset with the engine's renderer. Returns (dataset, ground-truth cloud)."""
    if preset == "layered-boxes":
        gt = layered_boxes_cloud()
        n_train, n_test = n_train or 12, 4 if n_test is None else n_test
        cams, test_mask = camera_rig(n_train, n_test)
    elif preset == "flat-card":
        gt = flat_card_cloud()
        n_train, n_test = n_train or 8, 2 if n_test is None else n_test
        cams, test_mask = camera_rig(n_train, n_test, distance=4.0, spread=(0.8, 0.5), fx=80.0)
    elif preset == "textured-sphere-field":
        gt = sphere_field_cloud(rng)
        n_train, n_test = n_train or 12, 4 if n_test is None else n_test
        cams, test_mask = camera_rig(n_train, n_test, distance=6.0, fx=72.0, target=(0, 0, 0.4))
    else:
        raise ValueError(f"unknown preset '{preset}' (choose from {', '.join(PRESETS)})")

    images, depths = [], []
    for cam in cams:
        out = render(gt, cam)
        images.append(out.color.astype(np.float32).astype(np.float64))
        depths.append(out.depth.astype(np.float32).astype(np.float64))
    points = colors = None
    if with_points:
        points, colors = _sparse_points(gt, rng, points_per_gaussian)
        points = points.astype(np.float32).astype(np.float64)
        colors = np.round(colors * 255) / 255
    train_idx = [i for i in range(len(cams)) if not test_mask[i]]
    test_idx = [i for i in range(len(cams)) if test_mask[i]]
    dataset = SceneDataset(cams, images, train_idx, test_idx, depths, points, colors,
                           gt.background.copy())
    return dataset, gt
