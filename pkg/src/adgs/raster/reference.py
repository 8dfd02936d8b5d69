"""Dense (untiled) reference compositor.

Every visible Gaussian is evaluated at every pixel with plain numpy. It shares no
code with the tiled kernels and serves as the forward model of the
finite-difference gradient oracle. Passing ``branch`` from an earlier call pins
the piecewise decisions (culling, sort order, skip/clamp/stop, colour clipping) so that finite
differences probe a single smooth piece.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene_model import Camera, GaussianCloud
from .projection import ALPHA_MAX, ALPHA_MIN, T_STOP, project_gaussians


@dataclass
class Branch:
    order: np.ndarray
    active: np.ndarray  # (n_sorted, P)
    clamped: np.ndarray  # (n_sorted, P)
    color_low: np.ndarray = None  # (N, 3) colour clipped at 0
    color_high: np.ndarray = None  # (N, 3) colour clipped at 1


def render_dense(cloud: GaussianCloud, cam: Camera, branch: Branch | None = None):
    proj = project_gaussians(cloud, cam)
    H, W = cam.height, cam.width
    order = proj.sort_order() if branch is None else branch.order
    jj, ii = np.meshgrid(np.arange(W) + 0.5, np.arange(H) + 0.5)
    px, py = jj.ravel(), ii.ravel()
    m = proj.mean2d[order]
    con = proj.conic[order]
    dx = px[None, :] - m[:, 0:1]
    dy = py[None, :] - m[:, 1:2]
    power = -0.5 * (con[:, 0:1] * dx * dx + con[:, 2:3] * dy * dy) - con[:, 1:2] * dx * dy
    raw = proj.opacity[order][:, None] * np.exp(power)
    if branch is None:
        clamped = raw > ALPHA_MAX
        alpha = np.where(clamped, ALPHA_MAX, raw)
        alpha = np.where(alpha < ALPHA_MIN, 0.0, alpha)
        trans = np.cumprod(np.vstack([np.ones((1, H * W)), 1.0 - alpha]), axis=0)[:-1]
        active = (alpha > 0) & (trans >= T_STOP)
        branch = Branch(order, active, clamped, proj.raw_color < 0.0, proj.raw_color > 1.0)
    alpha = np.where(branch.clamped, ALPHA_MAX, raw) * branch.active
    trans_full = np.cumprod(np.vstack([np.ones((1, H * W)), 1.0 - alpha]), axis=0)
    weights = alpha * trans_full[:-1]
    final_t = trans_full[-1]
    color = np.where(branch.color_low, 0.0, np.where(branch.color_high, 1.0, proj.raw_color))[order]
    rgb = np.einsum("np,nc->pc", weights, color) + final_t[:, None] * cloud.background[None, :]
    depth = weights.T @ proj.depth[order]
    result = {
        "color": rgb.reshape(H, W, 3),
        "depth": depth.reshape(H, W),
        "accum_alpha": weights.sum(axis=0).reshape(H, W),
        "final_transmittance": final_t.reshape(H, W),
    }
    return result, branch
