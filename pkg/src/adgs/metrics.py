"""Evaluation metrics: PSNR, SSIM, depth rank correlation, and the per-view report."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import MetricUndefinedError, ShapeError
from .io.checkpoint import checkpoint_size
from .losses import ssim
from .raster import render
from .scene_model import Camera, GaussianCloud

PSNR_CAP = 99.0
SROCC_ALPHA_MASK = 0.5
NOT_COMPUTED = "not computed"


def psnr(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = (a - b).ravel()
    return psnr_from_mse(math.fsum(diff * diff) / diff.size if diff.size else 0.0)


def psnr_from_mse(mse: float) -> float:
    """-10 log10(MSE) for images in [0, 1], capped at PSNR_CAP (also for MSE = 0)."""
    if mse < 0:
        raise ValueError("MSE must be nonnegative")
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * math.log10(mse))


def depth_srocc(d_pred, d_ref, mask=None) -> float:
    """Spearman correlation: Pearson correlation of average (fractional) ranks.

    Raises MetricUndefinedError for fewer than two masked pixels or a constant side.
    """
    d_pred = np.asarray(d_pred, dtype=np.float64)
    d_ref = np.asarray(d_ref, dtype=np.float64)
    if d_pred.shape != d_ref.shape:
        raise ShapeError(f"shape mismatch: {d_pred.shape} vs {d_ref.shape}")
    if mask is None:
        mask = np.ones(d_pred.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != d_pred.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match depth {d_pred.shape}")
    x = d_pred[mask]
    y = d_ref[mask]
    if x.size < 2:
        raise MetricUndefinedError(f"need at least 2 valid pixels, got {x.size}")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise MetricUndefinedError("rank correlation undefined for a constant depth map")
    rx = rankdata(x) - (x.size + 1) / 2
    ry = rankdata(y) - (y.size + 1) / 2
    return float(np.dot(rx, ry) / math.sqrt(np.dot(rx, rx) * np.dot(ry, ry)))


@dataclass
class ViewMetrics:
    view: int
    psnr: float | None
    ssim: float | None
    srocc: float | None
    note: str = ""


@dataclass
class EvalReport:
    views: list[ViewMetrics] = field(default_factory=list)
    gaussian_count: int = 0
    model_bytes: int = 0

    def _mean(self, attr) -> float | None:
        vals = [getattr(v, attr) for v in self.views if getattr(v, attr) is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def mean_psnr(self) -> float | None:
        return self._mean("psnr")

    @property
    def mean_ssim(self) -> float | None:
        return self._mean("ssim")

    @property
    def mean_srocc(self) -> float | None:
        return self._mean("srocc")

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["view", "psnr", "ssim", "depth_srocc", "lpips", "note"])
            for v in self.views:
                w.writerow([v.view, _fmt(v.psnr), _fmt(v.ssim), _fmt(v.srocc), NOT_COMPUTED, v.note])
            w.writerow(["mean", _fmt(self.mean_psnr), _fmt(self.mean_ssim), _fmt(self.mean_srocc),
                        NOT_COMPUTED, f"gaussians={self.gaussian_count} bytes={self.model_bytes}"])
        return path

    def summary(self) -> str:
        lines = [f"views evaluated: {len(self.views)}",
                 f"gaussians: {self.gaussian_count}  model bytes: {self.model_bytes}"]
        for name, value in (("PSNR", self.mean_psnr), ("SSIM", self.mean_ssim),
                            ("depth SROCC", self.mean_srocc)):
            lines.append(f"mean {name}: {_fmt(value)}")
        lines.append(f"LPIPS: {NOT_COMPUTED}")
        return "\n".join(lines)


def _fmt(x) -> str:
    return "undefined" if x is None else repr(float(x))


def evaluate(cloud: GaussianCloud, cameras: list[Camera], gt_images: list, ref_depths=None,
             view_ids=None) -> EvalReport:
    """Render each camera and score it. Views without ground truth are skipped and noted."""
    if ref_depths is None:
        ref_depths = [None] * len(cameras)
    if not len(cameras) == len(gt_images) == len(ref_depths):
        raise ShapeError("cameras, images and depths must be aligned lists")
    view_ids = list(range(len(cameras))) if view_ids is None else list(view_ids)
    model = cloud.astype(np.float64)
    report = EvalReport(gaussian_count=len(cloud),
                        model_bytes=checkpoint_size(len(cloud), cloud.sh_degree, with_moments=False))
    for vid, cam, gt, ref in zip(view_ids, cameras, gt_images, ref_depths):
        if gt is None:
            report.views.append(ViewMetrics(vid, None, None, None, "missing ground truth"))
            continue
        out = render(model, cam)
        srocc, note = None, ""
        if ref is not None:
            try:
                srocc = depth_srocc(out.depth, ref, out.accum_alpha > SROCC_ALPHA_MASK)
            except MetricUndefinedError as exc:
                note = f"srocc undefined: {exc}"
        report.views.append(ViewMetrics(vid, psnr(out.color, gt), ssim(out.color, gt)[0], srocc, note))
    return report
