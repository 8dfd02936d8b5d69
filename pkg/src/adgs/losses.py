"""Training objectives with exact gradients w.r.t. rendered images and depths.

Images are (H, W, 3) float arrays, depths (H, W). Every loss returns its value
together with the gradient(s) it owns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidParameterError, ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
DEFAULT_LAMBDA_SSIM = 0.2
REDUCTIONS = ("mean", "sum")


@dataclass(frozen=True)
class LossWeights:
    lambda_ssim: float = DEFAULT_LAMBDA_SSIM
    lambda_r: float = 0.001
    omega1: float = 0.01
    omega2: float = 0.05
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    # False drops the edge-aware smoothness sum from L_ds while keeping the range term
    smoothness_term: bool = True
    # "mean" divides the smoothness sum by the pixel count; "sum" keeps it raw
    depth_reduction: str = "mean"

    def __post_init__(self):
        values = (self.lambda_ssim, self.lambda_r, self.omega1, self.omega2,
                  self.lambda1, self.lambda2, self.lambda3)
        if not all(np.isfinite(v) and v >= 0 for v in values):
            raise InvalidParameterError("loss weights must be finite and nonnegative")
        if self.lambda_ssim > 1:
            raise InvalidParameterError("lambda_ssim must lie in [0, 1]")
        if self.depth_reduction not in REDUCTIONS:
            raise InvalidParameterError(f"depth_reduction must be one of {REDUCTIONS}")


def _check_same(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


@lru_cache(maxsize=16)
def _filter_matrix(n: int) -> np.ndarray:
    """1-D Gaussian window with reflect padding as an (n, n) linear map."""
    half = SSIM_WINDOW // 2
    x = np.arange(SSIM_WINDOW) - half
    k = np.exp(-(x ** 2) / (2 * SSIM_SIGMA ** 2))
    k /= k.sum()
    src = np.pad(np.arange(n), half, mode="reflect") if n > 1 else np.zeros(n + 2 * half, int)
    F = np.zeros((n, n))
    for i in range(n):
        np.add.at(F[i], src[i:i + SSIM_WINDOW], k)
    F.setflags(write=False)
    return F


def _blur(x: np.ndarray, Fh: np.ndarray, Fw: np.ndarray) -> np.ndarray:
    t = np.tensordot(Fh, x, axes=(1, 0))
    return np.tensordot(t, Fw, axes=(1, 1)).transpose(0, 2, 1)


def _blur_adjoint(g: np.ndarray, Fh: np.ndarray, Fw: np.ndarray) -> np.ndarray:
    return _blur(g, Fh.T, Fw.T)


def _as_hwc(x):
    x = np.asarray(x, dtype=np.float64)
    return x[..., None] if x.ndim == 2 else x


def ssim_map(a, b):
    a, b = _as_hwc(a), _as_hwc(b)
    _check_same(a, b)
    Fh, Fw = _filter_matrix(a.shape[0]), _filter_matrix(a.shape[1])
    mu_a, mu_b = _blur(a, Fh, Fw), _blur(b, Fh, Fw)
    var_a = _blur(a * a, Fh, Fw) - mu_a ** 2
    var_b = _blur(b * b, Fh, Fw) - mu_b ** 2
    cov = _blur(a * b, Fh, Fw) - mu_a * mu_b
    num1 = 2 * mu_a * mu_b + SSIM_C1
    num2 = 2 * cov + SSIM_C2
    den1 = mu_a ** 2 + mu_b ** 2 + SSIM_C1
    den2 = var_a + var_b + SSIM_C2
    return (num1 * num2) / (den1 * den2), (mu_a, mu_b, cov, num1, num2, den1, den2, Fh, Fw)


def ssim(a, b, *, return_grad_b: bool = False):
    """Mean SSIM over pixels and channels, and its gradient w.r.t. ``a`` (and ``b``).

    11x11 Gaussian window (sigma 1.5), reflect padding at the borders.
    """
    a_in = np.asarray(a, dtype=np.float64)
    a3, b3 = _as_hwc(a), _as_hwc(b)
    smap, (mu_a, mu_b, cov, num1, num2, den1, den2, Fh, Fw) = ssim_map(a3, b3)
    n = smap.size
    value = float(smap.mean())
    # partials of the per-pixel SSIM w.r.t. local statistics, pre-scaled by 1/n
    s = smap / n
    d_num1 = s / num1
    d_num2 = s / num2
    d_den1 = -s / den1
    d_den2 = -s / den2

    def grad_for(x, y, mu_x, mu_y):
        g_mu = d_num1 * 2 * mu_y + d_den1 * 2 * mu_x
        g_var = d_den2
        g_cov = d_num2 * 2
        g_mu_total = g_mu - 2 * mu_x * g_var - mu_y * g_cov
        return (_blur_adjoint(g_mu_total, Fh, Fw) + 2 * x * _blur_adjoint(g_var, Fh, Fw)
                + y * _blur_adjoint(g_cov, Fh, Fw))

    ga = grad_for(a3, b3, mu_a, mu_b).reshape(a_in.shape)
    if not return_grad_b:
        return value, ga
    gb = grad_for(b3, a3, mu_b, mu_a).reshape(a_in.shape)
    return value, ga, gb


def photometric_loss(v, v_gt, lambda_ssim: float = DEFAULT_LAMBDA_SSIM, *, both: bool = False):
    """(1 - l) * mean|v - v_gt| + l * (1 - SSIM(v, v_gt)).

    Returns (value, dL/dv), or (value, dL/dv, dL/dv_gt) when ``both`` is set.
    """
    v = np.asarray(v, dtype=np.float64)
    v_gt = np.asarray(v_gt, dtype=np.float64)
    _check_same(v, v_gt)
    diff = v - v_gt
    l1 = float(np.abs(diff).mean())
    g_l1 = np.sign(diff) / diff.size
    value = (1 - lambda_ssim) * l1
    g_v = (1 - lambda_ssim) * g_l1
    g_gt = -g_v
    if lambda_ssim > 0:
        s, gs_v, gs_gt = ssim(v, v_gt, return_grad_b=True)
        value += lambda_ssim * (1 - s)
        g_v = g_v - lambda_ssim * gs_v
        g_gt = g_gt - lambda_ssim * gs_gt
    if both:
        return value, g_v, g_gt
    return value, g_v


def pseudo_view_consistency(u1, u2, lambda_ssim: float = DEFAULT_LAMBDA_SSIM):
    """Photometric agreement of two models' renders of one pseudo view.

    Returns (value, dL/du1, dL/du2); both renders receive gradient.
    """
    return photometric_loss(u1, u2, lambda_ssim, both=True)


def image_gradient_magnitude(v) -> np.ndarray:
    """Per-pixel sum over channels of |forward difference| in x plus y (zero past the border)."""
    v = _as_hwc(v)
    g = np.zeros(v.shape[:2])
    g[:, :-1] += np.abs(np.diff(v, axis=1)).sum(axis=2)
    g[:-1, :] += np.abs(np.diff(v, axis=0)).sum(axis=2)
    return g


def depth_smoothness(d, v, lambda_r: float, *, smoothness_term: bool = True,
                     reduction: str = "sum", return_grad_v: bool = False):
    """Edge-aware depth smoothness with a depth-range reward.

    sum_p (|dx d| + |dy d|) * exp(-||grad v||_1)  -  lambda_r * (max d - min d)

    Forward differences. With ``reduction="mean"`` the first term is divided by
    H*W (the range term is unchanged). The range subgradient goes to the first
    argmax / argmin in row-major order.
    Returns (value, dL/dd), plus dL/dv through the edge weight when ``return_grad_v``.
    """
    if reduction not in REDUCTIONS:
        raise InvalidParameterError(f"reduction must be one of {REDUCTIONS}")
    d = np.asarray(d, dtype=np.float64)
    v = _as_hwc(v)
    if d.ndim != 2 or d.shape != v.shape[:2]:
        raise ShapeError(f"depth {d.shape} incompatible with image {v.shape}")
    if not np.all(np.isfinite(d)):
        raise InvalidParameterError("depth contains non-finite values")
    grad = np.zeros_like(d)
    grad_v = np.zeros_like(v)
    value = 0.0
    if smoothness_term:
        weight = np.exp(-image_gradient_magnitude(v))
        if reduction == "mean":
            weight /= d.size
        ddx = np.diff(d, axis=1)
        ddy = np.diff(d, axis=0)
        value += float((np.abs(ddx) * weight[:, :-1]).sum() + (np.abs(ddy) * weight[:-1, :]).sum())
        sx = np.sign(ddx) * weight[:, :-1]
        sy = np.sign(ddy) * weight[:-1, :]
        grad[:, 1:] += sx
        grad[:, :-1] -= sx
        grad[1:, :] += sy
        grad[:-1, :] -= sy
        if return_grad_v:
            # dL/dm for m = ||grad v||_1, then through |forward differences| of v
            coeff = np.zeros_like(d)
            coeff[:, :-1] += np.abs(ddx)
            coeff[:-1, :] += np.abs(ddy)
            g_m = -coeff * weight
            vx = np.sign(np.diff(v, axis=1)) * g_m[:, :-1, None]
            vy = np.sign(np.diff(v, axis=0)) * g_m[:-1, :, None]
            grad_v[:, 1:] += vx
            grad_v[:, :-1] -= vx
            grad_v[1:, :] += vy
            grad_v[:-1, :] -= vy
    if lambda_r:
        flat = d.ravel()
        i_max, i_min = int(np.argmax(flat)), int(np.argmin(flat))
        value -= lambda_r * float(flat[i_max] - flat[i_min])
        gflat = grad.reshape(-1)
        gflat[i_max] -= lambda_r
        gflat[i_min] += lambda_r
    if return_grad_v:
        return value, grad, grad_v
    return value, grad


def total_depth_smoothness(v, d, u, d_u, omega1: float, omega2: float, lambda_r: float, *,
                           smoothness_term: bool = True, reduction: str = "sum",
                           return_grad_images: bool = False):
    """omega1 * L_ds(d, v) + omega2 * L_ds(d_u, u).

    Returns (value, dL/dd, dL/dd_u), followed by (dL/dv, dL/du) when
    ``return_grad_images`` is set.
    """
    kw = {"smoothness_term": smoothness_term, "reduction": reduction, "return_grad_v": True}
    l_train, g_train, gv = depth_smoothness(d, v, lambda_r, **kw)
    l_pseudo, g_pseudo, gu = depth_smoothness(d_u, u, lambda_r, **kw)
    out = (omega1 * l_train + omega2 * l_pseudo, omega1 * g_train, omega2 * g_pseudo)
    if return_grad_images:
        out += (omega1 * gv, omega2 * gu)
    return out


@dataclass
class CombinedLoss:
    total: float
    photometric: float
    depth_smoothness: float
    pseudo: float
    grads: dict = field(default_factory=dict)  # keys: v, d, u, d_u


def combined_loss(v_k, v_gt, d_k, u_k, d_uk, u_other, weights: LossWeights) -> CombinedLoss:
    """Low-phase objective for one model k:

    l1 * L_ph(v_k, v_gt) + l2 * L_tds(v_k, d_k, u_k, d_uk) + l3 * L_pseudo(u_k, u_other).

    Only model k's renders receive gradient here; the other model gets its
    symmetric share from its own evaluation.
    """
    w = weights
    l_ph, g_v = photometric_loss(v_k, v_gt, w.lambda_ssim)
    l_tds, g_d, g_du, g_tv, g_tu = total_depth_smoothness(
        v_k, d_k, u_k, d_uk, w.omega1, w.omega2, w.lambda_r, smoothness_term=w.smoothness_term,
        reduction=w.depth_reduction, return_grad_images=True)
    l_ps, g_u, _ = pseudo_view_consistency(u_k, u_other, w.lambda_ssim)
    total = w.lambda1 * l_ph + w.lambda2 * l_tds + w.lambda3 * l_ps
    grads = {"v": w.lambda1 * g_v + w.lambda2 * g_tv, "d": w.lambda2 * g_d,
             "u": w.lambda3 * g_u + w.lambda2 * g_tu,
             "d_u": w.lambda2 * g_du}
    return CombinedLoss(total, l_ph, l_tds, l_ps, grads)
