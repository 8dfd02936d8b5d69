"""Per-Gaussian screen projection (EWA affine approximation) and its adjoint."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene_model import (Camera, GaussianCloud, quat_to_rotmat, sh_basis, sh_basis_grad,
                           sigmoid)

LOWPASS = 0.3
ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99
T_STOP = 1e-4


@dataclass
class Projection:
    """Screen-space quantities for every Gaussian of a cloud under one camera.

    Rows with ``visible == False`` are culled and hold unspecified values.
    """

    visible: np.ndarray  # (N,) bool
    mean2d: np.ndarray  # (N, 2) pixels
    cov2d: np.ndarray  # (N, 2, 2) including the low-pass floor
    conic: np.ndarray  # (N, 3) entries (a, b, c) of inv(cov2d)
    depth: np.ndarray  # (N,) camera-space z
    color: np.ndarray  # (N, 3)
    opacity: np.ndarray  # (N,)
    radius: np.ndarray  # (N,) pixel radius outside which alpha < ALPHA_MIN
    # cached intermediates for the adjoint
    cam: Camera = None
    t_cam: np.ndarray = None
    J: np.ndarray = None
    cov_cam: np.ndarray = None
    R: np.ndarray = None
    scale: np.ndarray = None
    quat_norm: np.ndarray = None
    quat_unit: np.ndarray = None
    dirs: np.ndarray = None
    dir_len: np.ndarray = None
    basis: np.ndarray = None
    raw_color: np.ndarray = None
    sh: np.ndarray = None

    def __len__(self):
        return len(self.visible)

    def sort_order(self) -> np.ndarray:
        """Visible Gaussians front to back; ties broken by index ascending."""
        idx = np.flatnonzero(self.visible)
        return idx[np.lexsort((idx, self.depth[idx]))]


def _mat3_apply(R: np.ndarray, v: np.ndarray) -> np.ndarray:
    # row-wise R @ v[i] without BLAS so each row's rounding is position independent
    return np.einsum("ij,nj->ni", R, v)


def project_gaussians(cloud: GaussianCloud, cam: Camera) -> Projection:
    n = len(cloud)
    mu = cloud.mu.astype(np.float64)
    log_scale = cloud.log_scale.astype(np.float64)
    quat = cloud.quat.astype(np.float64)
    sh = cloud.sh.astype(np.float64)
    opacity = sigmoid(cloud.opacity_logit.astype(np.float64))

    Rc = cam.rotation
    t = _mat3_apply(Rc, mu) + cam.translation
    x, y, z = t[:, 0], t[:, 1], t[:, 2]
    front = z > cam.near
    zs = np.where(front, z, 1.0)

    mean2d = np.stack([cam.fx * x / zs + cam.cx, cam.fy * y / zs + cam.cy], axis=1)

    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx / zs
    J[:, 0, 2] = -cam.fx * x / (zs * zs)
    J[:, 1, 1] = cam.fy / zs
    J[:, 1, 2] = -cam.fy * y / (zs * zs)

    quat_norm = np.linalg.norm(quat, axis=1)
    safe_q = np.where(quat_norm[:, None] > 1e-12, quat, np.array([1.0, 0, 0, 0]))
    R = quat_to_rotmat(safe_q)
    quat_unit = safe_q / np.linalg.norm(safe_q, axis=1, keepdims=True)
    scale = np.exp(log_scale)
    M = R * scale[:, None, :]
    cov = np.einsum("nij,nkj->nik", M, M)
    cov_cam = np.einsum("ij,njk,lk->nil", Rc, cov, Rc)
    cov2d = np.einsum("nij,njk,nlk->nil", J, cov_cam, J)
    cov2d[:, 0, 0] += LOWPASS
    cov2d[:, 1, 1] += LOWPASS
    a, b, c = cov2d[:, 0, 0], 0.5 * (cov2d[:, 0, 1] + cov2d[:, 1, 0]), cov2d[:, 1, 1]
    det = a * c - b * b
    det_safe = np.where(det > 0, det, 1.0)
    conic = np.stack([c / det_safe, -b / det_safe, a / det_safe], axis=1)

    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    reach = 255.0 * opacity
    log_reach = np.log(np.maximum(reach, 1.0))
    radius = np.sqrt(2.0 * log_reach * lam_max) * (1 + 1e-9) + 1e-9

    W, H = cam.width, cam.height
    on_screen = ((mean2d[:, 0] + radius >= 0.5) & (mean2d[:, 0] - radius <= W - 0.5)
                 & (mean2d[:, 1] + radius >= 0.5) & (mean2d[:, 1] - radius <= H - 0.5))
    visible = front & (reach >= 1.0) & on_screen & (det > 0) & (quat_norm > 1e-12)

    v = mu - cam.center
    dir_len = np.linalg.norm(v, axis=1)
    dirs = v / np.where(dir_len > 0, dir_len, 1.0)[:, None]
    degree = cloud.sh_degree
    basis = sh_basis(degree, dirs)
    raw_color = np.einsum("nk,nkc->nc", basis, sh) + 0.5
    color = np.clip(raw_color, 0.0, 1.0)

    return Projection(visible, mean2d, cov2d, conic, z.copy(), color, opacity, radius,
                      cam, t, J, cov_cam, R, scale, quat_norm, quat_unit, dirs, dir_len,
                      basis, raw_color, sh)


def project_backward(proj: Projection, g_mean2d, g_conic, g_opacity, g_color, g_depth):
    """Chain screen-space gradients back to cloud parameters. Culled rows get zeros."""
    cam = proj.cam
    vis = proj.visible
    n = len(proj)
    keep = vis[:, None]
    g_mean2d = np.where(keep, g_mean2d, 0.0)
    g_conic = np.where(keep, g_conic, 0.0)
    g_color = np.where(keep, g_color, 0.0)
    g_opacity = np.where(vis, g_opacity, 0.0)
    g_depth = np.where(vis, g_depth, 0.0)

    o = proj.opacity
    g_logit = g_opacity * o * (1.0 - o)

    # colour
    inside = (proj.raw_color > 0.0) & (proj.raw_color < 1.0)
    g_raw = g_color * inside
    g_sh = proj.basis[:, :, None] * g_raw[:, None, :]
    degree = int(round(np.sqrt(proj.basis.shape[1]))) - 1
    g_mu = np.zeros((n, 3))
    if degree > 0:
        dB = sh_basis_grad(degree, proj.dirs)  # (N, K, 3)
        g_dir = np.einsum("nc,nkc,nkd->nd", g_raw, proj.sh, dB)
        d = proj.dirs
        radial = np.einsum("nd,nd->n", d, g_dir)
        g_mu += (g_dir - d * radial[:, None]) / np.where(proj.dir_len > 0, proj.dir_len, 1.0)[:, None]

    # conic -> cov2d
    A = np.empty((n, 2, 2))
    A[:, 0, 0], A[:, 0, 1], A[:, 1, 0], A[:, 1, 1] = (proj.conic[:, 0], proj.conic[:, 1],
                                                      proj.conic[:, 1], proj.conic[:, 2])
    gA = np.empty((n, 2, 2))
    gA[:, 0, 0] = g_conic[:, 0]
    gA[:, 0, 1] = gA[:, 1, 0] = 0.5 * g_conic[:, 1]
    gA[:, 1, 1] = g_conic[:, 2]
    g_cov2d = -np.einsum("nij,njk,nkl->nil", A, gA, A)

    J, cov_cam = proj.J, proj.cov_cam
    g_cov_cam = np.einsum("nji,njk,nkl->nil", J, g_cov2d, J)
    g_J = 2.0 * np.einsum("nij,njk,nkl->nil", g_cov2d, J, cov_cam)

    Rc = cam.rotation
    g_cov = np.einsum("ji,njk,kl->nil", Rc, g_cov_cam, Rc)

    R, s = proj.R, proj.scale
    M = R * s[:, None, :]
    g_M = 2.0 * np.einsum("nij,njk->nik", g_cov, M)
    g_s = np.einsum("nik,nik->nk", R, g_M)
    g_log_scale = g_s * s
    g_R = g_M * s[:, None, :]
    g_quat = _rotmat_backward(proj.quat_unit, g_R)
    radial = np.einsum("ni,ni->n", proj.quat_unit, g_quat)
    g_quat = (g_quat - proj.quat_unit * radial[:, None]) / np.where(proj.quat_norm > 1e-12,
                                                                     proj.quat_norm, 1.0)[:, None]

    # projection of the mean, Jacobian entries and depth all depend on t_cam
    x, y, z = proj.t_cam[:, 0], proj.t_cam[:, 1], proj.t_cam[:, 2]
    z = np.where(vis, z, 1.0)
    fx, fy = cam.fx, cam.fy
    z2, z3 = z * z, z * z * z
    g_t = np.empty((n, 3))
    g_t[:, 0] = g_mean2d[:, 0] * fx / z - g_J[:, 0, 2] * fx / z2
    g_t[:, 1] = g_mean2d[:, 1] * fy / z - g_J[:, 1, 2] * fy / z2
    g_t[:, 2] = (-g_mean2d[:, 0] * fx * x / z2 - g_mean2d[:, 1] * fy * y / z2
                 - g_J[:, 0, 0] * fx / z2 - g_J[:, 1, 1] * fy / z2
                 + g_J[:, 0, 2] * 2 * fx * x / z3 + g_J[:, 1, 2] * 2 * fy * y / z3
                 + g_depth)
    g_mu += np.einsum("ji,nj->ni", Rc, g_t)

    grads = {"mu": g_mu, "log_scale": g_log_scale, "quat": g_quat,
             "opacity_logit": g_logit, "sh": g_sh}
    for key, val in grads.items():
        val[~vis] = 0.0
    return grads


def _rotmat_backward(q: np.ndarray, g_R: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. a unit quaternion (w, x, y, z) given dL/dR."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = g_R
    gw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0]
              - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    gx = 2 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1]
              - w * g[:, 1, 2] + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2])
    gy = 2 * (-2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0]
              + z * g[:, 1, 2] - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2])
    gz = 2 * (-2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0]
              - 2 * z * g[:, 1, 1] + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    return np.stack([gw, gx, gy, gz], axis=1)
