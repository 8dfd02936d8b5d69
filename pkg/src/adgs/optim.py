"""Adaptive-moment optimizer over the per-Gaussian parameter groups."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .scene_model import PARAM_NAMES, GaussianCloud

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    position_lr_init: float = 1.6e-4  # times scene extent
    position_lr_final: float = 1.6e-6  # times scene extent
    sh_dc_lr: float = 0.0025
    sh_rest_lr: float = 0.0025 / 20
    opacity_lr: float = 0.05
    scaling_lr: float = 0.005
    rotation_lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15


def exponential_lr(step: int, total: int, lr_init: float, lr_final: float) -> float:
    """Log-linear interpolation from lr_init (step 0) to lr_final (step total)."""
    if total <= 0:
        return lr_init
    r = min(max(step / total, 0.0), 1.0)
    return math.exp((1 - r) * math.log(lr_init) + r * math.log(lr_final))


@dataclass
class OptimizerState:
    """First/second moment buffers, one row per Gaussian for every parameter group."""

    exp_avg: dict[str, np.ndarray]
    exp_avg_sq: dict[str, np.ndarray]
    step: int = 0
    skipped: int = 0  # Gaussian-updates skipped because of non-finite gradients
    config: OptimizerConfig = field(default_factory=OptimizerConfig)

    @classmethod
    def for_cloud(cls, cloud: GaussianCloud, config: OptimizerConfig | None = None) -> "OptimizerState":
        params = cloud.params()
        return cls({k: np.zeros(p.shape) for k, p in params.items()},
                   {k: np.zeros(p.shape) for k, p in params.items()},
                   config=config or OptimizerConfig())

    def __len__(self):
        return len(self.exp_avg["mu"])

    def select(self, index) -> None:
        """Keep only the given rows (after pruning / splitting)."""
        for buf in (self.exp_avg, self.exp_avg_sq):
            for k in buf:
                buf[k] = buf[k][index]

    def extend(self, n: int) -> None:
        """Append ``n`` zero rows for newly born Gaussians."""
        if n <= 0:
            return
        for buf in (self.exp_avg, self.exp_avg_sq):
            for k in buf:
                buf[k] = np.concatenate([buf[k], np.zeros((n,) + buf[k].shape[1:])])

    def group_lrs(self, scene_extent: float, total_iters: int) -> dict[str, np.ndarray | float]:
        c = self.config
        pos = exponential_lr(self.step, total_iters, c.position_lr_init * scene_extent,
                             c.position_lr_final * scene_extent)
        return {"mu": pos, "log_scale": c.scaling_lr, "quat": c.rotation_lr,
                "opacity_logit": c.opacity_lr, "sh": None}


def optimizer_update(opt: OptimizerState, grads: dict[str, np.ndarray], cloud: GaussianCloud,
                     scene_extent: float, total_iters: int) -> GaussianCloud:
    """One Adam step on every group. Rows with any non-finite gradient are left untouched."""
    c = opt.config
    n = len(cloud)
    finite = np.ones(n, dtype=bool)
    for name in PARAM_NAMES:
        g = grads[name].reshape(n, -1)
        finite &= np.all(np.isfinite(g), axis=1)
    bad = n - int(finite.sum())
    if bad:
        opt.skipped += bad
        log.warning("skipping update for %d Gaussians with non-finite gradients", bad)

    lrs = opt.group_lrs(scene_extent, total_iters)
    opt.step += 1
    bc1 = 1 - c.beta1 ** opt.step
    bc2 = 1 - c.beta2 ** opt.step
    new = {}
    for name in PARAM_NAMES:
        p = getattr(cloud, name)
        g = np.where(_rows(finite, p.ndim), grads[name], 0.0)
        m, v = opt.exp_avg[name], opt.exp_avg_sq[name]
        m_new = c.beta1 * m + (1 - c.beta1) * g
        v_new = c.beta2 * v + (1 - c.beta2) * g * g
        keep = _rows(finite, p.ndim)
        opt.exp_avg[name] = np.where(keep, m_new, m)
        opt.exp_avg_sq[name] = np.where(keep, v_new, v)
        if name == "sh":
            lr = np.full((1, p.shape[1], 1), c.sh_rest_lr)
            lr[0, 0, 0] = c.sh_dc_lr
        else:
            lr = lrs[name]
        step = lr * (opt.exp_avg[name] / bc1) / (np.sqrt(opt.exp_avg_sq[name] / bc2) + c.eps)
        step = np.where(keep, step, 0.0)
        new[name] = (p.astype(np.float64) - step).astype(p.dtype)
    return GaussianCloud(**new, background=cloud.background)


def _rows(mask: np.ndarray, ndim: int) -> np.ndarray:
    return mask.reshape((-1,) + (1,) * (ndim - 1))
