"""Gaussian primitives, cameras, covariance construction and SH colour."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidParameterError, ShapeError

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
MAX_SH_DEGREE = 2

PARAM_NAMES = ("mu", "log_scale", "quat", "opacity_logit", "sh")


def sh_coeff_count(degree: int) -> int:
    return (degree + 1) ** 2


def sh_degree_from_count(count: int) -> int:
    for degree in range(MAX_SH_DEGREE + 1):
        if sh_coeff_count(degree) == count:
            return degree
    raise ShapeError(f"{count} SH coefficients per channel is not (L+1)^2 for L in 0..{MAX_SH_DEGREE}")


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def normalize_quat(quat) -> np.ndarray:
    q = np.asarray(quat, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm <= 1e-12):
        raise InvalidParameterError("quaternion norm is (near) zero")
    return q / norm


def quat_to_rotmat(quat) -> np.ndarray:
    """Rotation matrices for (..., 4) quaternions in (w, x, y, z) order.

    The input is normalized first.
    """
    q = normalize_quat(quat)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def build_covariance(log_scale, quat) -> np.ndarray:
    """Sigma = R S S^T R^T with S = diag(exp(log_scale)). Batched over leading axes."""
    s = np.exp(np.asarray(log_scale, dtype=np.float64))
    R = quat_to_rotmat(quat)
    M = R * s[..., None, :]
    cov = M @ np.swapaxes(M, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def sh_basis(degree: int, dirs: np.ndarray) -> np.ndarray:
    """Real SH basis values, shape (..., (degree+1)^2), for unit directions (..., 3)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    out = np.empty(dirs.shape[:-1] + (sh_coeff_count(degree),))
    out[..., 0] = SH_C0
    if degree >= 1:
        x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if degree >= 2:
        out[..., 4] = SH_C2[0] * x * y
        out[..., 5] = SH_C2[1] * y * z
        out[..., 6] = SH_C2[2] * (2 * z * z - x * x - y * y)
        out[..., 7] = SH_C2[3] * x * z
        out[..., 8] = SH_C2[4] * (x * x - y * y)
    return out


def sh_basis_grad(degree: int, dirs: np.ndarray) -> np.ndarray:
    """d basis / d dir, shape (..., K, 3)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    K = sh_coeff_count(degree)
    out = np.zeros(dirs.shape[:-1] + (K, 3))
    if degree >= 1:
        x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
        out[..., 1, 1] = -SH_C1
        out[..., 2, 2] = SH_C1
        out[..., 3, 0] = -SH_C1
    if degree >= 2:
        out[..., 4, 0] = SH_C2[0] * y
        out[..., 4, 1] = SH_C2[0] * x
        out[..., 5, 1] = SH_C2[1] * z
        out[..., 5, 2] = SH_C2[1] * y
        out[..., 6, 0] = -2 * SH_C2[2] * x
        out[..., 6, 1] = -2 * SH_C2[2] * y
        out[..., 6, 2] = 4 * SH_C2[2] * z
        out[..., 7, 0] = SH_C2[3] * z
        out[..., 7, 2] = SH_C2[3] * x
        out[..., 8, 0] = 2 * SH_C2[4] * x
        out[..., 8, 1] = -2 * SH_C2[4] * y
    return out


def eval_sh_color(sh, view_dir) -> np.ndarray:
    """RGB of one primitive seen along ``view_dir``.

    ``sh`` has shape (K, 3) with K = (L+1)^2. Band 0 carries a +0.5 offset and the
    result is clamped to [0, 1].
    """
    sh = np.asarray(sh, dtype=np.float64)
    if sh.ndim != 2 or sh.shape[1] != 3:
        raise ShapeError(f"expected SH array of shape (K, 3), got {sh.shape}")
    degree = sh_degree_from_count(sh.shape[0])
    d = np.asarray(view_dir, dtype=np.float64)
    if d.shape != (3,) or abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise InvalidParameterError("view_dir must be a unit 3-vector")
    raw = sh_basis(degree, d) @ sh + 0.5
    return np.clip(raw, 0.0, 1.0)


def rgb_to_sh0(rgb) -> np.ndarray:
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


@dataclass
class Gaussian3D:
    mu: np.ndarray
    log_scale: np.ndarray
    quat: np.ndarray
    opacity_logit: float
    sh: np.ndarray  # (K, 3)

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def covariance(self) -> np.ndarray:
        return build_covariance(self.log_scale, self.quat)


def _rotation_error(R: np.ndarray) -> float:
    return float(np.max(np.abs(R.T @ R - np.eye(3))))


@dataclass(eq=False)
class Camera:
    """Pinhole camera. ``rotation``/``translation`` map world points to camera space.

    Pixel (col j, row i) has its centre at (j + 0.5, i + 0.5).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray
    translation: np.ndarray
    near: float = 0.01

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.width = int(self.width)
        self.height = int(self.height)
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidParameterError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise InvalidParameterError("image size must be at least 1x1")
        if not self.near > 0:
            raise InvalidParameterError("near clipping depth must be positive")
        if _rotation_error(self.rotation) > 1e-9:
            raise InvalidParameterError("camera rotation is not orthonormal")

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def world_to_camera(self) -> np.ndarray:
        W = np.eye(4)
        W[:3, :3] = self.rotation
        W[:3, 3] = self.translation
        return W

    def with_pose(self, rotation, translation) -> "Camera":
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height,
                      rotation, translation, self.near)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, -1.0, 0.0), *, fx, fy=None, width, height,
                cx=None, cy=None, near=0.01) -> "Camera":
        """Camera at ``eye`` looking at ``target`` (OpenCV axes: x right, y down, z forward)."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        return cls(fx, fx if fy is None else fy,
                   width / 2.0 if cx is None else cx, height / 2.0 if cy is None else cy,
                   width, height, R, -R @ eye, near)


@dataclass(eq=False)
class GaussianCloud:
    """Ordered set of Gaussians stored as parallel arrays (row i is primitive i)."""

    mu: np.ndarray
    log_scale: np.ndarray
    quat: np.ndarray
    opacity_logit: np.ndarray
    sh: np.ndarray  # (N, K, 3)
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        n = len(self.mu)
        self.mu = np.asarray(self.mu).reshape(n, 3)
        self.log_scale = np.asarray(self.log_scale).reshape(n, 3)
        self.quat = np.asarray(self.quat).reshape(n, 4)
        self.opacity_logit = np.asarray(self.opacity_logit).reshape(n)
        self.sh = np.asarray(self.sh)
        if self.sh.ndim != 3 or self.sh.shape[0] != n or self.sh.shape[2] != 3:
            raise ShapeError(f"sh must have shape (N, K, 3), got {self.sh.shape}")
        sh_degree_from_count(self.sh.shape[1])
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)

    @property
    def sh_degree(self) -> int:
        return sh_degree_from_count(self.sh.shape[1])

    def __len__(self) -> int:
        return len(self.mu)

    def __getitem__(self, i: int) -> Gaussian3D:
        return Gaussian3D(self.mu[i].copy(), self.log_scale[i].copy(), self.quat[i].copy(),
                          float(self.opacity_logit[i]), self.sh[i].copy())

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def empty(cls, sh_degree: int = 0, background=(0.0, 0.0, 0.0), dtype=np.float64) -> "GaussianCloud":
        K = sh_coeff_count(sh_degree)
        return cls(np.zeros((0, 3), dtype), np.zeros((0, 3), dtype), np.zeros((0, 4), dtype),
                   np.zeros(0, dtype), np.zeros((0, K, 3), dtype), np.asarray(background, float))

    @classmethod
    def from_gaussians(cls, gaussians: Iterable[Gaussian3D], background=(0.0, 0.0, 0.0),
                       sh_degree: int | None = None) -> "GaussianCloud":
        gs = list(gaussians)
        if not gs:
            return cls.empty(sh_degree or 0, background)
        degrees = {sh_degree_from_count(np.asarray(g.sh).shape[0]) for g in gs}
        if len(degrees) != 1 or (sh_degree is not None and degrees != {sh_degree}):
            raise ShapeError("all primitives in a cloud must share one SH degree")
        return cls(
            np.array([g.mu for g in gs], dtype=np.float64),
            np.array([g.log_scale for g in gs], dtype=np.float64),
            np.array([g.quat for g in gs], dtype=np.float64),
            np.array([g.opacity_logit for g in gs], dtype=np.float64),
            np.array([g.sh for g in gs], dtype=np.float64),
            background,
        )

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(self.mu.copy(), self.log_scale.copy(), self.quat.copy(),
                             self.opacity_logit.copy(), self.sh.copy(), self.background.copy())

    def astype(self, dtype) -> "GaussianCloud":
        return GaussianCloud(*(p.astype(dtype) for p in self.params().values()),
                             background=self.background.copy())

    def select(self, index: np.ndarray | Sequence[int]) -> "GaussianCloud":
        index = np.asarray(index)
        return GaussianCloud(*(p[index] for p in self.params().values()),
                             background=self.background.copy())

    def append(self, other: "GaussianCloud") -> "GaussianCloud":
        if other.sh.shape[1] != self.sh.shape[1]:
            raise ShapeError("SH degree mismatch")
        dtype = self.mu.dtype
        return GaussianCloud(
            *(np.concatenate([a, b.astype(dtype)]) for a, b in
              zip(self.params().values(), other.params().values())),
            background=self.background.copy(),
        )

    @property
    def opacity(self) -> np.ndarray:
        return sigmoid(self.opacity_logit.astype(np.float64))

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale.astype(np.float64))
