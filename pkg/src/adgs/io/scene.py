"""Scene directories: JSON manifest + PFM/PNG images + optional PLY point cloud."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from ..density import scene_extent_from_cameras
from ..errors import InvalidParameterError, SceneLoadError
from ..scene_model import Camera, GaussianCloud, logit, rgb_to_sh0, sh_coeff_count
from .images import read_image, read_pfm, write_pfm
from .ply import read_ply, write_ply

MANIFEST = "manifest.json"
FORMAT_VERSION = 1
TEST_EVERY = 8
INIT_OPACITY = 0.1
RANDOM_INIT_COUNT = 1000


@dataclass(eq=False)
class SceneDataset:
    cameras: list[Camera]
    images: list[np.ndarray]
    train_idx: list[int]
    test_idx: list[int]
    depths: list[np.ndarray | None] = field(default_factory=list)
    points: np.ndarray | None = None
    point_colors: np.ndarray | None = None
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not self.depths:
            self.depths = [None] * len(self.cameras)
        if set(self.train_idx) & set(self.test_idx):
            raise SceneLoadError("train and test splits overlap")
        for i, (cam, img) in enumerate(zip(self.cameras, self.images)):
            if img.shape != (cam.height, cam.width, 3):
                raise SceneLoadError(f"frame {i}: image shape {img.shape} does not match camera "
                                     f"{cam.width}x{cam.height}")

    @property
    def train_cameras(self) -> list[Camera]:
        return [self.cameras[i] for i in self.train_idx]

    @property
    def test_cameras(self) -> list[Camera]:
        return [self.cameras[i] for i in self.test_idx]

    @property
    def train_images(self) -> list[np.ndarray]:
        return [self.images[i] for i in self.train_idx]

    @property
    def test_images(self) -> list[np.ndarray]:
        return [self.images[i] for i in self.test_idx]

    @property
    def test_depths(self) -> list[np.ndarray | None]:
        return [self.depths[i] for i in self.test_idx]

    @property
    def scene_extent(self) -> float:
        return scene_extent_from_cameras(np.array([c.center for c in self.train_cameras]))


_CAMERA_FIELDS = ("fx", "fy", "cx", "cy", "width", "height", "world_to_camera")


def _parse_camera(i: int, frame: dict, near: float) -> Camera:
    for name in _CAMERA_FIELDS:
        if name not in frame:
            raise SceneLoadError(f"frame {i}: missing field '{name}'")
    try:
        rt = np.asarray(frame["world_to_camera"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SceneLoadError(f"frame {i}: field 'world_to_camera' is not numeric") from exc
    if rt.shape != (3, 4):
        raise SceneLoadError(f"frame {i}: field 'world_to_camera' must be 3 rows of 4 numbers")
    R = rt[:, :3]
    if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9:
        raise SceneLoadError(f"frame {i}: rotation in 'world_to_camera' is not orthonormal "
                             f"(camera index {i})")
    try:
        return Camera(float(frame["fx"]), float(frame["fy"]), float(frame["cx"]), float(frame["cy"]),
                      int(frame["width"]), int(frame["height"]), R, rt[:, 3],
                      float(frame.get("near", near)))
    except InvalidParameterError as exc:
        raise SceneLoadError(f"frame {i}: {exc}") from exc


def load_scene(path) -> SceneDataset:
    root = Path(path)
    manifest_path = root / MANIFEST if root.is_dir() else root
    root = manifest_path.parent
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError as exc:
        raise SceneLoadError(f"{manifest_path}: manifest not found") from exc
    except json.JSONDecodeError as exc:
        raise SceneLoadError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if manifest.get("version", FORMAT_VERSION) != FORMAT_VERSION:
        raise SceneLoadError(f"unsupported manifest version {manifest.get('version')}")
    frames = manifest.get("frames")
    if not frames:
        raise SceneLoadError("manifest field 'frames' is missing or empty")
    near = float(manifest.get("near", 0.01))

    cameras, images, depths = [], [], []
    for i, frame in enumerate(frames):
        cam = _parse_camera(i, frame, near)
        if "image" not in frame:
            raise SceneLoadError(f"frame {i}: missing field 'image'")
        img_path = root / frame["image"]
        if not img_path.exists():
            raise SceneLoadError(f"frame {i}: image file '{frame['image']}' not found")
        img = read_image(img_path)
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=2)
        if img.shape != (cam.height, cam.width, 3):
            raise SceneLoadError(f"frame {i}: image is {img.shape[1]}x{img.shape[0]}, camera says "
                                 f"{cam.width}x{cam.height}")
        depth = None
        if frame.get("depth"):
            depth = read_pfm(root / frame["depth"])
            if depth.shape != (cam.height, cam.width):
                raise SceneLoadError(f"frame {i}: depth map size does not match camera")
        cameras.append(cam)
        images.append(img)
        depths.append(depth)

    splits = [f.get("split") for f in frames]
    if any(s is not None for s in splits):
        for i, s in enumerate(splits):
            if s not in ("train", "test"):
                raise SceneLoadError(f"frame {i}: field 'split' must be 'train' or 'test'")
        train_idx = [i for i, s in enumerate(splits) if s == "train"]
        test_idx = [i for i, s in enumerate(splits) if s == "test"]
    else:
        test_idx = [i for i in range(len(frames)) if i % TEST_EVERY == 0]
        train_idx = [i for i in range(len(frames)) if i % TEST_EVERY != 0]
    if not train_idx:
        raise SceneLoadError("scene has no training frames")

    points = colors = None
    if manifest.get("point_cloud"):
        ply_path = root / manifest["point_cloud"]
        if not ply_path.exists():
            raise SceneLoadError(f"point cloud '{manifest['point_cloud']}' not found")
        points, colors = read_ply(ply_path)
    background = np.asarray(manifest.get("background", [0.0, 0.0, 0.0]), dtype=np.float64)
    if background.shape != (3,):
        raise SceneLoadError("field 'background' must hold 3 numbers")
    return SceneDataset(cameras, images, train_idx, test_idx, depths, points, colors, background)


def save_scene(dataset: SceneDataset, path) -> Path:
    """Write a scene directory; images and depths go to float PFM (lossless for float32)."""
    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    frames = []
    test = set(dataset.test_idx)
    for i, (cam, img) in enumerate(zip(dataset.cameras, dataset.images)):
        name = f"images/{i:04d}.pfm"
        write_pfm(root / name, img)
        rt = np.hstack([cam.rotation, cam.translation[:, None]])
        frame = {"image": name, "split": "test" if i in test else "train",
                 "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                 "width": cam.width, "height": cam.height, "near": cam.near,
                 "world_to_camera": rt.tolist()}
        if dataset.depths[i] is not None:
            (root / "depths").mkdir(exist_ok=True)
            dname = f"depths/{i:04d}.pfm"
            write_pfm(root / dname, dataset.depths[i])
            frame["depth"] = dname
        frames.append(frame)
    manifest = {"format": "adgs-scene", "version": FORMAT_VERSION,
                "background": dataset.background.tolist(), "frames": frames}
    if dataset.points is not None:
        write_ply(root / "points.ply", dataset.points, dataset.point_colors)
        manifest["point_cloud"] = "points.ply"
    (root / MANIFEST).write_text(json.dumps(manifest, indent=1))
    return root


def knn_mean_distance(points: np.ndarray, k: int = 3) -> np.ndarray:
    """Mean distance from each point to its k nearest other points."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n < 2:
        return np.full(n, 1.0)
    kk = min(k, n - 1)
    dist, _ = cKDTree(points).query(points, k=kk + 1)
    return dist[:, 1:].mean(axis=1)


def scene_center(cameras: list[Camera]) -> np.ndarray:
    """Least-squares point closest to all optical axes (falls back to the camera centroid)."""
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for cam in cameras:
        d = cam.rotation[2]
        P = np.eye(3) - np.outer(d, d)
        A += P
        b += P @ cam.center
    if np.linalg.cond(A) > 1e8:
        return np.mean([c.center for c in cameras], axis=0)
    return np.linalg.solve(A, b)


def frustum_box(cameras: list[Camera], rng: np.random.Generator, samples: int = 20000):
    """Axis-aligned box around the region every camera sees (rejection-sampled estimate)."""
    center = scene_center(cameras)
    reach = max(np.linalg.norm(c.center - center) for c in cameras)
    pts = center + rng.uniform(-reach, reach, size=(samples, 3))
    inside = np.ones(samples, dtype=bool)
    for cam in cameras:
        t = pts @ cam.rotation.T + cam.translation
        z = t[:, 2]
        zs = np.where(z > cam.near, z, 1.0)
        u = cam.fx * t[:, 0] / zs + cam.cx
        v = cam.fy * t[:, 1] / zs + cam.cy
        inside &= (z > cam.near) & (u >= 0) & (u <= cam.width) & (v >= 0) & (v <= cam.height)
    if inside.sum() < 2:
        return center - reach / 2, center + reach / 2
    return pts[inside].min(axis=0), pts[inside].max(axis=0)


def init_cloud(dataset: SceneDataset, rng: np.random.Generator, sh_degree: int = 0,
               dtype=np.float32) -> GaussianCloud:
    """Isotropic Gaussians from the point cloud, or uniform in the shared frustum box."""
    if dataset.points is not None and len(dataset.points):
        pts = np.asarray(dataset.points, dtype=np.float64)
        rgb = np.asarray(dataset.point_colors, dtype=np.float64)
    else:
        if not dataset.cameras:
            raise SceneLoadError("cannot initialise: no point cloud and no cameras")
        lo, hi = frustum_box(dataset.train_cameras, rng)
        pts = rng.uniform(lo, hi, size=(RANDOM_INIT_COUNT, 3))
        rgb = rng.uniform(0, 1, size=(RANDOM_INIT_COUNT, 3))
    n = len(pts)
    dist = np.maximum(knn_mean_distance(pts), 1e-7)
    log_scale = np.repeat(np.log(dist)[:, None], 3, axis=1)
    quat = np.zeros((n, 4))
    quat[:, 0] = 1.0
    sh = np.zeros((n, sh_coeff_count(sh_degree), 3))
    sh[:, 0, :] = rgb_to_sh0(rgb)
    opacity = np.full(n, float(logit(INIT_OPACITY)))
    cloud = GaussianCloud(pts, log_scale, quat, opacity, sh, dataset.background)
    return cloud.astype(dtype)


def spiral_cameras(cameras: list[Camera], n_frames: int = 30, turns: float = 2.0) -> list[Camera]:
    """Cameras on a helix around the mean training pose, all aimed at the scene centre."""
    if not cameras:
        raise InvalidParameterError("need at least one camera for a trajectory")
    if n_frames < 1:
        raise InvalidParameterError("n_frames must be positive")
    center = scene_center(cameras)
    centers = np.array([c.center for c in cameras])
    mean_eye = centers.mean(axis=0)
    R = np.mean([c.rotation for c in cameras], axis=0)
    right, down = R[0] / np.linalg.norm(R[0]), R[1] / np.linalg.norm(R[1])
    forward = center - mean_eye
    dist = np.linalg.norm(forward)
    forward /= dist
    rad = max(np.abs((centers - mean_eye) @ right).max(), np.abs((centers - mean_eye) @ down).max(),
              0.05 * dist)
    ref = cameras[0]
    out = []
    for k, theta in enumerate(np.linspace(0.0, 2 * np.pi * turns, n_frames, endpoint=False)):
        drift = 0.1 * dist * (2 * k / max(n_frames - 1, 1) - 1)  # helix: slow dolly along the view axis
        eye = mean_eye + rad * np.cos(theta) * right + rad * np.sin(theta) * down + drift * forward
        out.append(Camera.look_at(eye, center, -down, fx=ref.fx, fy=ref.fy, width=ref.width,
                                  height=ref.height, cx=ref.cx, cy=ref.cy, near=ref.near))
    return out
