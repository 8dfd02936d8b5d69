"""Forward rendering of colour/depth/alpha and the analytic backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from ..scene_model import Camera, Gaussian3D, GaussianCloud
from . import kernels
from .projection import (ALPHA_MAX, ALPHA_MIN, T_STOP, Projection, project_backward,
                         project_gaussians)

TILE = kernels.TILE


@dataclass
class Splat2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    source_index: int
    color: np.ndarray
    opacity: float


def project_gaussian(g: Gaussian3D, cam: Camera, source_index: int = 0) -> Splat2D | None:
    """Project a single primitive; returns None when it is culled."""
    cloud = GaussianCloud.from_gaussians([g])
    proj = project_gaussians(cloud, cam)
    if not proj.visible[0]:
        return None
    return Splat2D(proj.mean2d[0], proj.cov2d[0], float(proj.depth[0]), source_index,
                   proj.color[0], float(proj.opacity[0]))


@dataclass
class RenderOutput:
    color: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W)
    accum_alpha: np.ndarray  # (H, W)
    final_transmittance: np.ndarray  # (H, W)
    n_contrib: np.ndarray  # (H, W) number of Gaussians composited at each pixel
    projection: Projection
    # replay data for the backward pass
    _tiles: tuple = None
    _last: np.ndarray = None

    @property
    def visible(self) -> np.ndarray:
        return self.projection.visible


@dataclass
class GradBundle:
    """Per-Gaussian parameter gradients from one backward pass.

    ``pos_grad_norm`` is the norm of dLoss/dmean2d expressed in normalized device
    coordinates (pixel gradient scaled by width/2, height/2); ``hits`` is 1 for
    Gaussians that were not culled in this view.
    """

    mu: np.ndarray
    log_scale: np.ndarray
    quat: np.ndarray
    opacity_logit: np.ndarray
    sh: np.ndarray
    pos_grad_norm: np.ndarray
    hits: np.ndarray

    def params(self) -> dict[str, np.ndarray]:
        return {"mu": self.mu, "log_scale": self.log_scale, "quat": self.quat,
                "opacity_logit": self.opacity_logit, "sh": self.sh}

    def __add__(self, other: "GradBundle") -> "GradBundle":
        return GradBundle(*(a + b for a, b in zip(self._fields(), other._fields())))

    def _fields(self):
        return (self.mu, self.log_scale, self.quat, self.opacity_logit, self.sh,
                self.pos_grad_norm, self.hits)

    @classmethod
    def zeros_like(cls, cloud: GaussianCloud) -> "GradBundle":
        n = len(cloud)
        return cls(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4)), np.zeros(n),
                   np.zeros(cloud.sh.shape), np.zeros(n), np.zeros(n, dtype=np.int64))


def bin_tiles(proj: Projection, width: int, height: int):
    """Sorted (tile -> Gaussian) lists: CSR offsets plus flattened Gaussian indices."""
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    order = proj.sort_order()
    m = proj.mean2d[order]
    r = proj.radius[order]
    # pixel j is covered when |j + 0.5 - m| <= r
    x0 = np.clip(np.ceil(m[:, 0] - r - 0.5), 0, width - 1).astype(np.int64) // TILE
    x1 = np.clip(np.floor(m[:, 0] + r - 0.5), 0, width - 1).astype(np.int64) // TILE
    y0 = np.clip(np.ceil(m[:, 1] - r - 0.5), 0, height - 1).astype(np.int64) // TILE
    y1 = np.clip(np.floor(m[:, 1] + r - 0.5), 0, height - 1).astype(np.int64) // TILE
    nx = x1 - x0 + 1
    ny = y1 - y0 + 1
    counts = nx * ny
    total = int(counts.sum())
    rank = np.repeat(np.arange(len(order)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    nxr = np.repeat(nx, counts)
    tile_id = (np.repeat(y0, counts) + local // nxr) * tiles_x + np.repeat(x0, counts) + local % nxr
    key = np.lexsort((rank, tile_id))
    tile_list = order[rank[key]].astype(np.int64)
    offsets = np.zeros(tiles_x * tiles_y + 1, dtype=np.int64)
    np.cumsum(np.bincount(tile_id, minlength=tiles_x * tiles_y), out=offsets[1:])
    return offsets, tile_list


def _kernel_args(proj: Projection, background):
    return (np.ascontiguousarray(proj.mean2d), np.ascontiguousarray(proj.conic),
            np.ascontiguousarray(proj.opacity), np.ascontiguousarray(proj.color),
            np.ascontiguousarray(proj.depth), np.asarray(background, dtype=np.float64))


def render(cloud: GaussianCloud, cam: Camera) -> RenderOutput:
    proj = project_gaussians(cloud, cam)
    offsets, tile_list = bin_tiles(proj, cam.width, cam.height)
    color, depth, accum, final_t, last, count = kernels.composite_forward(
        cam.width, cam.height, offsets, tile_list, *_kernel_args(proj, cloud.background),
        ALPHA_MIN, ALPHA_MAX, T_STOP)
    return RenderOutput(color, depth, accum, final_t, count, proj, (offsets, tile_list), last)


def render_backward(cloud: GaussianCloud, cam: Camera, upstream, upstream_depth=None,
                    out: RenderOutput | None = None) -> GradBundle:
    """Gradients of sum(upstream * color) + sum(upstream_depth * depth).

    ``out`` may carry the forward result for the same cloud and camera to skip
    recomputing it.
    """
    H, W = cam.height, cam.width
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (H, W, 3):
        raise ShapeError(f"colour upstream must be {(H, W, 3)}, got {upstream.shape}")
    if upstream_depth is None:
        upstream_depth = np.zeros((H, W))
    upstream_depth = np.asarray(upstream_depth, dtype=np.float64)
    if upstream_depth.shape != (H, W):
        raise ShapeError(f"depth upstream must be {(H, W)}, got {upstream_depth.shape}")
    if out is None:
        out = render(cloud, cam)
    proj = out.projection
    offsets, tile_list = out._tiles
    g_mean2d, g_conic, g_opacity, g_color, g_depth = kernels.composite_backward(
        W, H, offsets, tile_list, *_kernel_args(proj, cloud.background),
        ALPHA_MIN, ALPHA_MAX, T_STOP, out._last, out.final_transmittance,
        np.ascontiguousarray(upstream), np.ascontiguousarray(upstream_depth), len(proj))
    grads = project_backward(proj, g_mean2d, g_conic, g_opacity, g_color, g_depth)
    ndc = g_mean2d * np.array([0.5 * W, 0.5 * H])
    pos_norm = np.where(proj.visible, np.linalg.norm(ndc, axis=1), 0.0)
    return GradBundle(grads["mu"], grads["log_scale"], grads["quat"], grads["opacity_logit"],
                      grads["sh"], pos_norm, proj.visible.astype(np.int64))


def screen_mean_gradient(cloud: GaussianCloud, cam: Camera, upstream, upstream_depth=None,
                         out: RenderOutput | None = None) -> np.ndarray:
    """dLoss/dmean2d in pixels (used by tests of the positional statistic)."""
    H, W = cam.height, cam.width
    if out is None:
        out = render(cloud, cam)
    if upstream_depth is None:
        upstream_depth = np.zeros((H, W))
    offsets, tile_list = out._tiles
    g_mean2d, *_ = kernels.composite_backward(
        W, H, offsets, tile_list, *_kernel_args(out.projection, cloud.background),
        ALPHA_MIN, ALPHA_MAX, T_STOP, out._last, out.final_transmittance,
        np.ascontiguousarray(upstream, dtype=np.float64),
        np.ascontiguousarray(upstream_depth, dtype=np.float64), len(out.projection))
    return g_mean2d
