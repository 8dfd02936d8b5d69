"""Two-model training loop with warm-up and alternating low/high densification phases."""

from __future__ import annotations

import csv
import enum
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .config import PhaseSchedule, RunConfig
from .density import DensifyParams, DensifyStats, accumulate, densify, prune
from .errors import InvalidParameterError
from .io.checkpoint import save_checkpoint
from .io.scene import SceneDataset, init_cloud
from .losses import combined_loss, photometric_loss
from .optim import OptimizerState, optimizer_update
from .raster import render, render_backward
from .scene_model import Camera, GaussianCloud

log = logging.getLogger(__name__)

LOSS_FIELDS = ["iteration", "phase", "model", "l_ph", "l_tds", "l_pseudo", "total",
               "gaussian_count"]
DENSITY_FIELDS = ["iteration", "phase", "model", "count_before", "clones", "splits",
                  "after_densify", "pruned", "total"]


class Phase(str, enum.Enum):
    WARMUP = "warmup"
    LOW = "low"
    HIGH = "high"


def phase_for_iteration(t: int, schedule: PhaseSchedule) -> Phase:
    if not 0 <= t < schedule.total_iters:
        raise InvalidParameterError(f"iteration {t} outside [0, {schedule.total_iters})")
    if t < schedule.warmup_iters:
        return Phase.WARMUP
    pos = (t - schedule.warmup_iters) % (schedule.low_iters + schedule.high_iters)
    first, second = ((Phase.LOW, Phase.HIGH) if schedule.low_first else (Phase.HIGH, Phase.LOW))
    first_len = schedule.low_iters if schedule.low_first else schedule.high_iters
    return first if pos < first_len else second


def is_block_start(t: int, schedule: PhaseSchedule) -> bool:
    """True at the first iteration of every alternating (low or high) block."""
    if t < schedule.warmup_iters:
        return False
    pos = (t - schedule.warmup_iters) % (schedule.low_iters + schedule.high_iters)
    first_len = schedule.low_iters if schedule.low_first else schedule.high_iters
    return pos == 0 or pos == first_len


def schedule_blocks(schedule: PhaseSchedule) -> list[tuple[Phase, int, int]]:
    """Contiguous (phase, start, end) blocks covering [0, total_iters)."""
    blocks = []
    if schedule.warmup_iters:
        blocks.append((Phase.WARMUP, 0, schedule.warmup_iters))
    t = schedule.warmup_iters
    while t < schedule.total_iters:
        phase = phase_for_iteration(t, schedule)
        length = schedule.low_iters if phase is Phase.LOW else schedule.high_iters
        end = min(t + length, schedule.total_iters)
        blocks.append((phase, t, end))
        t = end
    return blocks


def sample_pseudo_view(train_cams: list[Camera], rng: np.random.Generator, max_angle_deg: float,
                       max_trans_frac: float, scene_extent: float) -> Camera:
    """A training camera with a small random rotation and centre offset."""
    if not train_cams:
        raise InvalidParameterError("need at least one training camera")
    cam = train_cams[int(rng.integers(len(train_cams)))]
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = np.deg2rad(rng.uniform(0.0, max_angle_deg)) if max_angle_deg > 0 else 0.0
    R_delta = Rotation.from_rotvec(axis * angle).as_matrix()
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    offset = direction * rng.uniform(0.0, max_trans_frac * scene_extent) if max_trans_frac > 0 \
        else np.zeros(3)
    # new centre C + offset, new rotation R_delta @ R  =>  t' = R_delta @ (t - R @ offset)
    R = R_delta @ cam.rotation
    t = R_delta @ (cam.translation - cam.rotation @ offset)
    return cam.with_pose(R, t)


@dataclass
class ModelState:
    cloud: GaussianCloud
    opt: OptimizerState
    stats: DensifyStats
    rng: np.random.Generator


@dataclass
class TrainState:
    models: list[ModelState]
    dataset: SceneDataset
    config: RunConfig
    scene_extent: float
    rng: np.random.Generator  # pseudo-view sampling
    iteration: int = 0
    loss_log: list[dict] = field(default_factory=list)
    density_log: list[dict] = field(default_factory=list)


def init_state(config: RunConfig, dataset: SceneDataset) -> TrainState:
    seeds = np.random.SeedSequence(config.seed).spawn(5)
    models = []
    for k in range(2):
        init_rng = np.random.default_rng(seeds[k])
        cloud = init_cloud(dataset, init_rng, sh_degree=config.sh_degree)
        models.append(ModelState(cloud, OptimizerState.for_cloud(cloud, config.optimizer),
                                 DensifyStats.zeros(len(cloud)), np.random.default_rng(seeds[2 + k])))
    return TrainState(models, dataset, config, dataset.scene_extent,
                      np.random.default_rng(seeds[4]))


def _uses_combined(phase: Phase, config: RunConfig) -> bool:
    if config.loss_schedule == "combined":
        return True
    if config.loss_schedule == "photometric":
        return False
    return phase is Phase.LOW


def _densify_params(phase: Phase, config: RunConfig) -> DensifyParams:
    if phase is Phase.LOW and config.densify_schedule == "alternating":
        return config.densify.low
    return config.densify.high


def _densify_and_prune(state: TrainState, phase: Phase, params: DensifyParams):
    t = state.iteration
    for k, m in enumerate(state.models):
        before = len(m.cloud)
        res = densify(m.cloud, m.stats, params, state.scene_extent, m.rng)
        m.opt.select(res.kept)
        m.opt.extend(res.births)
        cloud, removed, kept = prune(res.cloud, params.opacity_threshold)
        m.opt.select(kept)
        m.cloud = cloud
        m.stats = DensifyStats.zeros(len(cloud))
        state.density_log.append({
            "iteration": t, "phase": phase.value, "model": k + 1, "count_before": before,
            "clones": res.clones, "splits": res.splits, "after_densify": len(res.cloud),
            "pruned": len(removed), "total": len(cloud)})


def _maybe_densify(state: TrainState, phase: Phase):
    t, cfg = state.iteration, state.config
    if phase is Phase.WARMUP:
        if cfg.densify.warmup_densify and t > 0 and t % cfg.densify.warmup_interval == 0:
            _densify_and_prune(state, phase, cfg.densify.high)
    elif is_block_start(t, cfg.schedule):
        _densify_and_prune(state, phase, _densify_params(phase, cfg))


def train_step(state: TrainState) -> list[dict]:
    """Run iteration ``state.iteration`` for both models and advance the counter."""
    cfg = state.config
    ds = state.dataset
    phase = phase_for_iteration(state.iteration, cfg.schedule)
    _maybe_densify(state, phase)

    view = state.iteration % len(ds.train_idx)
    cam = ds.train_cameras[view]
    gt = ds.train_images[view]
    outs = [render(m.cloud, cam) for m in state.models]
    combined = _uses_combined(phase, cfg)
    if combined:
        pcam = sample_pseudo_view(ds.train_cameras, state.rng, cfg.pseudo_view.max_angle_deg,
                                  cfg.pseudo_view.max_trans_frac, state.scene_extent)
        pouts = [render(m.cloud, pcam) for m in state.models]

    reports = []
    for k, m in enumerate(state.models):
        out = outs[k]
        if combined:
            res = combined_loss(out.color, gt, out.depth, pouts[k].color, pouts[k].depth,
                                pouts[1 - k].color, cfg.loss)
            bundle = render_backward(m.cloud, cam, res.grads["v"], res.grads["d"], out=out)
            pseudo_bundle = render_backward(m.cloud, pcam, res.grads["u"], res.grads["d_u"],
                                            out=pouts[k])
            grads = {name: g + pseudo_bundle.params()[name] for name, g in bundle.params().items()}
            row = (res.photometric, res.depth_smoothness, res.pseudo, res.total)
        else:
            l_ph, g_v = photometric_loss(out.color, gt, cfg.loss.lambda_ssim)
            bundle = render_backward(m.cloud, cam, g_v, None, out=out)
            grads = bundle.params()
            row = (l_ph, 0.0, 0.0, l_ph)
        m.stats = accumulate(m.stats, bundle)
        m.cloud = optimizer_update(m.opt, grads, m.cloud, state.scene_extent,
                                   cfg.schedule.total_iters)
        reports.append({"iteration": state.iteration, "phase": phase.value, "model": k + 1,
                        "l_ph": row[0], "l_tds": row[1], "l_pseudo": row[2], "total": row[3],
                        "gaussian_count": len(m.cloud)})
    state.loss_log.extend(reports)
    state.iteration += 1
    return reports


def _write_csv(path: Path, rows: list[dict], columns: list[str]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for r in rows:
            writer.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])


def _write_blocks(path: Path, schedule: PhaseSchedule):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["block", "phase", "start", "end"])
        for i, (phase, start, end) in enumerate(schedule_blocks(schedule)):
            writer.writerow([i, phase.value, start, end])


@dataclass
class TrainResult:
    state: TrainState
    out_dir: Path | None
    seconds: float

    @property
    def model(self) -> GaussianCloud:
        """The evaluation model (the first of the two)."""
        return self.state.models[0].cloud


def train(config: RunConfig, dataset: SceneDataset, out_dir=None, progress_every: int = 0) -> TrainResult:
    """Full run. Writes ``loss_log.csv``, ``density_log.csv``, ``phases.csv``, periodic and
    final checkpoints when ``out_dir`` is given; the first model is the evaluation model."""
    start = time.perf_counter()
    state = init_state(config, dataset)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        _write_blocks(out / "phases.csv", config.schedule)
    try:
        while state.iteration < config.schedule.total_iters:
            train_step(state)
            t = state.iteration
            if progress_every and t % progress_every == 0:
                r = state.loss_log[-2]
                log.info("iter %d  phase %s  L=%.4f  N=%d/%d", t, r["phase"], r["total"],
                         len(state.models[0].cloud), len(state.models[1].cloud))
            if out is not None and config.checkpoint_every and t % config.checkpoint_every == 0 \
                    and t < config.schedule.total_iters:
                for k, m in enumerate(state.models):
                    save_checkpoint(out / "checkpoints" / f"model{k + 1}_{t:06d}.ckpt", m.cloud, m.opt, t)
    except Exception:
        if out is not None:
            for k, m in enumerate(state.models):
                save_checkpoint(out / f"model{k + 1}_failed.ckpt", m.cloud, m.opt, state.iteration)
            _write_csv(out / "loss_log.csv", state.loss_log, LOSS_FIELDS)
            _write_csv(out / "density_log.csv", state.density_log, DENSITY_FIELDS)
        log.exception("training aborted at iteration %d", state.iteration)
        raise
    if out is not None:
        for k, m in enumerate(state.models):
            save_checkpoint(out / f"model{k + 1}.ckpt", m.cloud, m.opt, state.iteration)
        _write_csv(out / "loss_log.csv", state.loss_log, LOSS_FIELDS)
        _write_csv(out / "density_log.csv", state.density_log, DENSITY_FIELDS)
    return TrainResult(state, out, time.perf_counter() - start)
