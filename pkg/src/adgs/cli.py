"""Command-line entry point: ``adgs {synth,train,render,eval}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from .config import ABLATIONS, RunConfig, apply_ablation, load_config
from .errors import InvalidParameterError
from .io.checkpoint import load_checkpoint, save_checkpoint
from .io.images import write_pfm, write_png
from .io.scene import load_scene, save_scene, spiral_cameras
from .io.synth import PRESETS, synth_scene
from .metrics import evaluate
from .raster import render
from .trainer import train

log = logging.getLogger("adgs")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adgs", description="Sparse-view Gaussian splatting with "
                                "alternating densification.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic scene directory")
    s.add_argument("--preset", required=True, choices=PRESETS)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train the two-model pipeline")
    t.add_argument("--config", type=Path, help="YAML/JSON run config (defaults when omitted)")
    t.add_argument("--scene", required=True, type=Path)
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--seed", type=int)
    t.add_argument("--ablation", choices=ABLATIONS)
    t.add_argument("--progress", type=int, default=500, metavar="N",
                   help="log a progress line every N iterations (0 disables)")

    r = sub.add_parser("render", help="render a checkpoint")
    r.add_argument("--checkpoint", required=True, type=Path)
    r.add_argument("--scene", required=True, type=Path, help="scene supplying the cameras")
    view = r.add_mutually_exclusive_group(required=True)
    view.add_argument("--camera", type=int, metavar="INDEX")
    view.add_argument("--trajectory", choices=["spiral"])
    r.add_argument("--frames", type=int, default=30, help="frames along the trajectory")
    r.add_argument("--out", required=True, type=Path)

    e = sub.add_parser("eval", help="score a checkpoint on the scene's test split")
    e.add_argument("--checkpoint", required=True, type=Path)
    e.add_argument("--scene", required=True, type=Path)
    e.add_argument("--out", required=True, type=Path, help="CSV report path")
    return p


def _cmd_synth(args) -> int:
    dataset, gt = synth_scene(args.preset, np.random.default_rng(args.seed))
    save_scene(dataset, args.out)
    save_checkpoint(args.out / "ground_truth.ckpt", gt)
    print(f"wrote {args.preset} scene to {args.out} "
          f"({len(dataset.train_idx)} train / {len(dataset.test_idx)} test views)")
    return 0


def _describe(config: RunConfig) -> str:
    w = config.loss
    if config.loss_schedule == "photometric":
        losses = "photometric only in all phases (lambda2, lambda3 disabled)"
    else:
        when = "every iteration" if config.loss_schedule == "combined" else "low phases"
        losses = (f"combined loss in {when}: lambda1={w.lambda1} lambda2={w.lambda2} "
                  f"lambda3={w.lambda3} omega1={w.omega1} omega2={w.omega2} lambda_r={w.lambda_r}"
                  + ("" if w.smoothness_term else " (smoothness sum off)"))
    s = config.schedule
    return (f"ablation={config.ablation or 'none'} seed={config.seed} "
            f"schedule: warmup={s.warmup_iters} low={s.low_iters} high={s.high_iters} "
            f"total={s.total_iters}; densify={config.densify_schedule}; {losses}")


def _cmd_train(args) -> int:
    config = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.ablation:
        config = apply_ablation(config, args.ablation)
    dataset = load_scene(args.scene)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config_resolved.yaml").write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))
    print(_describe(config))
    result = train(config, dataset, args.out, progress_every=args.progress)
    print(f"trained {config.schedule.total_iters} iterations in {result.seconds:.1f}s; "
          f"evaluation model {args.out / 'model1.ckpt'} ({len(result.model)} Gaussians)")
    return 0


def _cmd_render(args) -> int:
    cloud, _, _ = load_checkpoint(args.checkpoint)
    dataset = load_scene(args.scene)
    if args.trajectory:
        cams = spiral_cameras(dataset.train_cameras, args.frames)
    else:
        if not 0 <= args.camera < len(dataset.cameras):
            raise InvalidParameterError(f"camera index {args.camera} outside "
                                        f"[0, {len(dataset.cameras)})")
        cams = [dataset.cameras[args.camera]]
    args.out.mkdir(parents=True, exist_ok=True)
    model = cloud.astype(np.float64)
    for i, cam in enumerate(cams):
        out = render(model, cam)
        stem = f"frame_{i:04d}" if args.trajectory else f"camera_{args.camera:04d}"
        write_png(args.out / f"{stem}.png", out.color)
        write_pfm(args.out / f"{stem}_depth.pfm", out.depth)
    print(f"rendered {len(cams)} view(s) to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    cloud, _, _ = load_checkpoint(args.checkpoint)
    dataset = load_scene(args.scene)
    report = evaluate(cloud, dataset.test_cameras, dataset.test_images, dataset.test_depths,
                      view_ids=dataset.test_idx)
    report.write_csv(args.out)
    print(report.summary())
    return 0


_COMMANDS = {"synth": _cmd_synth, "train": _cmd_train, "render": _cmd_render, "eval": _cmd_eval}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"adgs {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
