"""The ten acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line; the lines are printed in the terminal
summary (and immediately with ``-s``).
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from _util import fd_gradients, loss_fd, random_cloud, rel_error, simple_camera
from conftest import ACCEPTANCE_LINES
from adgs.config import PhaseSchedule, RunConfig, apply_ablation
from adgs.density import EPS_ALPHA, EPS_LOW, DensifyParams, DensifyStats, densify, prune
from adgs.io.synth import synth_scene
from adgs.losses import (LossWeights, combined_loss, depth_smoothness, photometric_loss, ssim)
from adgs.metrics import depth_srocc, evaluate, psnr_from_mse
from adgs.raster import ALPHA_MAX, ALPHA_MIN, T_STOP, kernels, render, render_backward
from adgs.raster.render import _kernel_args, bin_tiles
from adgs.scene_model import PARAM_NAMES, GaussianCloud, logit
from adgs.trainer import Phase, schedule_blocks, train

# Desk-scale run for criteria 6 and 8: Table thresholds and weights, shorter phases.
RECOVERY = RunConfig(schedule=PhaseSchedule(warmup_iters=500, low_iters=100, high_iters=100,
                                            total_iters=1000), seed=0, checkpoint_every=0)
ABLATION_SEEDS = range(5)


def record(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


def fd_rel(f, x, g, rng, n=200, h=1e-6):
    idx = rng.choice(x.size, size=min(n, x.size), replace=False)
    fd = loss_fd(f, x, h=h, idx=idx)
    num = np.array([fd[i] for i in idx])
    return float(np.max(np.abs(num - g.reshape(-1)[idx])) / max(np.max(np.abs(num)), 1e-12))


@pytest.fixture(scope="module")
def recovery(tmp_path_factory):
    dataset, _ = synth_scene("layered-boxes", np.random.default_rng(RECOVERY.seed))
    out = tmp_path_factory.mktemp("recovery")
    result = train(RECOVERY, dataset, out)
    report = evaluate(result.model, dataset.test_cameras, dataset.test_images, dataset.test_depths)
    return result, report


def test_criterion_01_render_gradients():
    start = time.perf_counter()
    worst = {name: 0.0 for name in PARAM_NAMES}
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        cam = simple_camera(32, 32)
        cloud = random_cloud(rng, n=10)
        up_c, up_d = rng.normal(size=(32, 32, 3)), rng.normal(size=(32, 32))
        bundle = render_backward(cloud, cam, up_c, up_d)
        fd = fd_gradients(cloud, cam, up_c, up_d, h=1e-3)
        for name in PARAM_NAMES:
            worst[name] = max(worst[name], rel_error(getattr(bundle, name), fd[name]))
    secs = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-3 and secs < 60
    record(1, ok, f"max rel error {max(worst.values()):.2e} (<= 1e-3) over 20 seeds, "
                  f"{secs:.1f}s (< 60s)")


def test_criterion_02_loss_gradients():
    rng = np.random.default_rng(2)
    v, gt, u, other = rng.uniform(size=(4, 32, 32, 3))
    d, d_u = rng.uniform(1, 4, size=(2, 32, 32))
    errs = {}
    _, g = photometric_loss(v, gt, 0.2)
    errs["photometric"] = fd_rel(lambda x: photometric_loss(x, gt, 0.2)[0], v, g, rng)
    _, g = ssim(v, gt)
    errs["ssim"] = fd_rel(lambda x: ssim(x, gt)[0], v, g, rng)
    # random continuous depths: the range-term argmax / argmin are unique
    _, g = depth_smoothness(d, v, 0.001)
    errs["depth_smoothness"] = fd_rel(lambda x: depth_smoothness(x, v, 0.001)[0], d, g, rng, h=1e-7)
    w = LossWeights()
    res = combined_loss(v, gt, d, u, d_u, other, w)
    args = {"v": v, "d": d, "u": u, "d_u": d_u}
    for key in args:
        def f(x, key=key):
            a = dict(args, **{key: x})
            return combined_loss(a["v"], gt, a["d"], a["u"], a["d_u"], other, w).total
        errs[f"combined/{key}"] = fd_rel(f, args[key], res.grads[key], rng, h=1e-7)
    worst = max(errs, key=errs.get)
    record(2, errs[worst] <= 1e-4, f"max rel error {errs[worst]:.2e} ({worst}) (<= 1e-4)")


def test_criterion_03_conservation_and_depth_channel():
    scenes = [(random_cloud(np.random.default_rng(s), n=40), [simple_camera(48, 40)]) for s in range(5)]
    for preset in ("flat-card", "layered-boxes", "textured-sphere-field"):
        ds, gt = synth_scene(preset, np.random.default_rng(0))
        scenes.append((gt, ds.cameras))
    worst, exact = 0.0, True
    for cloud, cams in scenes:
        for cam in cams:
            out = render(cloud, cam)
            worst = max(worst, float(np.max(np.abs(out.accum_alpha + out.final_transmittance - 1))))
            offsets, tiles = bin_tiles(out.projection, cam.width, cam.height)
            mean2d, conic, opacity, _, depth, _ = _kernel_args(out.projection, cloud.background)
            zcol = np.ascontiguousarray(np.repeat(depth[:, None], 3, axis=1))
            color, *_ = kernels.composite_forward(cam.width, cam.height, offsets, tiles, mean2d,
                                                  conic, opacity, zcol, depth, np.zeros(3),
                                                  ALPHA_MIN, ALPHA_MAX, T_STOP)
            exact &= all(np.array_equal(color[..., c], out.depth) for c in range(3))
    record(3, worst <= 1e-6 and exact,
           f"max |sum w + T - 1| = {worst:.1e} (<= 1e-6); depth == (z,z,z) colour bit-exact: {exact}")


def test_criterion_04_schedule_census():
    blocks = schedule_blocks(PhaseSchedule(warmup_iters=1500, low_iters=100, high_iters=100,
                                           total_iters=10000, low_first=True))
    phases = [b[0] for b in blocks]
    counts = (phases.count(Phase.WARMUP), phases.count(Phase.LOW), phases.count(Phase.HIGH))
    record(4, counts == (1, 43, 42) and len(blocks) - 1 == 85,
           f"warm-up/low/high blocks = {counts} (expected (1, 43, 42)), alternating = {len(blocks) - 1}")


def test_criterion_05_threshold_semantics():
    n = 3
    cloud = GaussianCloud(np.zeros((n, 3)), np.full((n, 3), np.log(0.001)), np.tile([1.0, 0, 0, 0], (n, 1)),
                          logit(np.array([0.004, 0.05, 0.5])), np.zeros((n, 1, 3)))
    low_survivors = len(prune(cloud, EPS_LOW)[0])
    high_survivors = len(prune(cloud, EPS_ALPHA)[0])
    one = cloud.select([2])
    stats = DensifyStats(np.array([0.0003]), np.array([1]))
    rng = np.random.default_rng(0)
    grows_high = len(densify(one, stats, DensifyParams.high(), 1.0, rng).cloud) == 2
    grows_low = len(densify(one, stats, DensifyParams.low(), 1.0, rng).cloud) == 2
    ok = low_survivors == 1 and high_survivors == 2 and grows_high and not grows_low
    record(5, ok, f"survivors eps_L={low_survivors} eps_alpha={high_survivors}; "
                  f"0.0003 densifies high={grows_high} low={grows_low}")


@pytest.mark.slow
def test_criterion_06_synthetic_recovery(recovery):
    result, report = recovery
    ok = (report.mean_psnr >= 28 and report.mean_srocc >= 0.9 and result.seconds <= 600
          and RECOVERY.schedule.total_iters <= 5000)
    record(6, ok, f"layered-boxes PSNR {report.mean_psnr:.2f} dB (>= 28), depth SROCC "
                  f"{report.mean_srocc:.3f} (>= 0.9), {result.seconds:.0f}s (<= 600s), "
                  f"{RECOVERY.schedule.total_iters} iterations")


@pytest.mark.slow
def test_criterion_07_directional_ablation():
    scores = {name: [] for name in ("AD-GS", "A", "B", "C")}
    for seed in ABLATION_SEEDS:
        dataset, _ = synth_scene("layered-boxes", np.random.default_rng(seed))
        for name in scores:
            cfg = replace(RECOVERY, seed=seed)
            if name != "AD-GS":
                cfg = apply_ablation(cfg, name)
            model = train(cfg, dataset).model
            rep = evaluate(model, dataset.test_cameras, dataset.test_images)
            scores[name].append(rep.mean_ssim)
    med = {k: float(np.median(v)) for k, v in scores.items()}
    order = " > ".join(sorted(med, key=med.get, reverse=True))
    record(7, med["AD-GS"] >= med["B"],
           f"median SSIM AD-GS {med['AD-GS']:.4f} >= B {med['B']:.4f}; reported A {med['A']:.4f} "
           f"C {med['C']:.4f}; ordering {order}")


@pytest.mark.slow
def test_criterion_08_count_dynamics(recovery):
    result, _ = recovery
    log = result.state.density_log
    grows = [r for r in log if r["phase"] == "high" and r["after_densify"] > r["count_before"]]
    shrinks = [r for r in log if r["phase"] == "low" and r["total"] < r["after_densify"]]
    record(8, bool(grows) and bool(shrinks),
           f"{len(grows)} high-phase densify steps grew the count, {len(shrinks)} low-phase prune "
           f"steps shrank it (need >= 1 each)")


def test_criterion_09_determinism(tmp_path):
    dataset, _ = synth_scene("layered-boxes", np.random.default_rng(5))
    cfg = RunConfig(schedule=PhaseSchedule(warmup_iters=100, low_iters=25, high_iters=25,
                                           total_iters=200), seed=11, checkpoint_every=0)
    train(cfg, dataset, tmp_path / "a")
    train(cfg, dataset, tmp_path / "b")
    names = ["loss_log.csv", "density_log.csv", "model1.ckpt", "model2.ckpt"]
    same = {n: (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names}
    record(9, all(same.values()), "byte-identical: " + ", ".join(f"{n}={v}" for n, v in same.items()))


def brute_spearman(x, y):
    n = len(x)

    def ranks(v):
        return [1 + sum(v[j] < v[i] for j in range(n)) + 0.5 * (sum(v[j] == v[i] for j in range(n)) - 1)
                for i in range(n)]

    rx, ry = ranks(x), ranks(y)
    mx, my = sum(rx) / n, sum(ry) / n
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    return num / (sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry)) ** 0.5


def test_criterion_10_metric_units():
    rng = np.random.default_rng(10)
    p = psnr_from_mse(0.01)
    a = rng.uniform(size=(16, 16, 3))
    s = ssim(a, a)[0]
    d = rng.uniform(1, 9, size=(10, 10))
    rev = depth_srocc(d.max() + d.min() - d, d)  # positive depths, order reversed
    x = rng.integers(0, 7, size=100).astype(float)
    y = x + rng.integers(0, 3, size=100)
    tie_err = abs(depth_srocc(x, y) - brute_spearman(x.tolist(), y.tolist()))
    ok = p == 20.0 and s == 1.0 and rev == -1.0 and tie_err <= 1e-12
    record(10, ok, f"PSNR(MSE=0.01)={p!r}, SSIM(a,a)={s!r}, SROCC(reversed)={rev!r}, "
                   f"tie error vs brute force {tie_err:.1e} (<= 1e-12)")
