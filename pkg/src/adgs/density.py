"""Clone / split densification, opacity pruning and the positional-gradient statistic."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, ShapeError
from .scene_model import GaussianCloud, quat_to_rotmat

TAU_POS = 0.0002
EPS_ALPHA = 0.005
TAU_LOW = 0.0005
EPS_LOW = 0.1


@dataclass(frozen=True)
class DensifyParams:
    grad_threshold: float
    opacity_threshold: float
    scale_split_threshold: float = 0.01
    split_count: int = 2
    split_scale_divisor: float = 1.6

    def __post_init__(self):
        if not self.grad_threshold >= 0:
            raise InvalidParameterError("grad_threshold must be nonnegative")
        if not 0 <= self.opacity_threshold <= 1:
            raise InvalidParameterError("opacity_threshold must lie in [0, 1]")
        if self.split_count < 2:
            raise InvalidParameterError("split_count must be at least 2")
        if not self.split_scale_divisor > 1:
            raise InvalidParameterError("split_scale_divisor must exceed 1")

    @classmethod
    def high(cls, **kw) -> "DensifyParams":
        return cls(TAU_POS, EPS_ALPHA, **kw)

    @classmethod
    def low(cls, **kw) -> "DensifyParams":
        return cls(TAU_LOW, EPS_LOW, **kw)


@dataclass
class DensifyStats:
    """Running sum of per-view screen-space positional gradient norms and hit counts."""

    grad_sum: np.ndarray
    count: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "DensifyStats":
        return cls(np.zeros(n), np.zeros(n, dtype=np.int64))

    def __len__(self):
        return len(self.grad_sum)

    def criterion(self) -> np.ndarray:
        return self.grad_sum / np.maximum(self.count, 1)

    def select(self, index) -> "DensifyStats":
        return DensifyStats(self.grad_sum[index], self.count[index])


def accumulate(stats: DensifyStats, bundle) -> DensifyStats:
    """Add one backward pass's ``pos_grad_norm`` / ``hits`` to the running statistic."""
    if len(bundle.pos_grad_norm) != len(stats):
        raise ShapeError("gradient bundle and statistics differ in length")
    return DensifyStats(stats.grad_sum + bundle.pos_grad_norm, stats.count + bundle.hits)


def prune(cloud: GaussianCloud, epsilon: float):
    """Remove every Gaussian with opacity < epsilon. Returns (cloud, removed, kept)."""
    if not 0 <= epsilon <= 1:
        raise InvalidParameterError("epsilon must lie in [0, 1]")
    keep = cloud.opacity >= epsilon
    kept = np.flatnonzero(keep)
    removed = np.flatnonzero(~keep)
    if len(removed) == 0:
        return cloud, removed, kept
    return cloud.select(kept), removed, kept


@dataclass
class DensifyResult:
    cloud: GaussianCloud
    kept: np.ndarray  # old row indices, in order, that occupy the first rows of ``cloud``
    clones: int
    splits: int
    births: int  # rows appended after the kept ones


def densify(cloud: GaussianCloud, stats: DensifyStats, params: DensifyParams,
            scene_extent: float, rng: np.random.Generator) -> DensifyResult:
    """Clone small / split large Gaussians whose mean positional gradient reaches the threshold.

    Output rows: surviving originals in order, then clones, then split children.
    """
    n = len(cloud)
    if len(stats) != n:
        raise ShapeError(f"statistics cover {len(stats)} Gaussians, cloud has {n}")
    if not scene_extent > 0:
        raise InvalidParameterError("scene_extent must be positive")
    fire = stats.criterion() >= params.grad_threshold
    big = cloud.scale.max(axis=1) > params.scale_split_threshold * scene_extent if n else np.zeros(0, bool)
    clone_idx = np.flatnonzero(fire & ~big)
    split_idx = np.flatnonzero(fire & big)
    if len(clone_idx) == 0 and len(split_idx) == 0:
        return DensifyResult(cloud, np.arange(n), 0, 0, 0)

    kept = np.flatnonzero(~(fire & big))
    out = cloud.select(kept).append(cloud.select(clone_idx))
    if len(split_idx):
        k = params.split_count
        parents = np.repeat(split_idx, k)
        children = cloud.select(parents)
        R = quat_to_rotmat(cloud.quat[parents].astype(np.float64))
        s = cloud.scale[parents]
        z = rng.standard_normal((len(parents), 3))
        offset = np.einsum("nij,nj->ni", R, s * z)
        dtype = cloud.mu.dtype
        children.mu = (cloud.mu[parents].astype(np.float64) + offset).astype(dtype)
        children.log_scale = (cloud.log_scale[parents].astype(np.float64)
                              - math.log(params.split_scale_divisor)).astype(dtype)
        out = out.append(children)
    births = len(out) - len(kept)
    return DensifyResult(out, kept, len(clone_idx), len(split_idx), births)


def scene_extent_from_cameras(centers: np.ndarray) -> float:
    """Radius of the bounding sphere (about the centroid) of the camera centres."""
    centers = np.asarray(centers, dtype=np.float64)
    radius = float(np.linalg.norm(centers - centers.mean(axis=0), axis=1).max()) if len(centers) else 0.0
    return radius if radius > 0 else 1.0

