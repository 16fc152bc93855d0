"""Command-line entry points.

Exit codes: 0 success, 1 validation or usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import viz
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RUNS_ENV, load_config, resolve_run_dir, write_config_echo
from .dataset import (
    SceneRegistry,
    build_tracks,
    load_store,
    parse_annotations,
    read_split_manifest,
    save_store,
    window_samples,
)
from .errors import ConfigError, GridForecastError
from .grids import GridGeometry
from .metrics import load_label_map, write_report
from .models.gridgen import GridGenerator, build_scene_encoder, forward_probabilities, pretrain_scene_encoder
from .models.sampler import TrajectorySampler, sample_trajectories
from .synthetic import load_scene_spec, write_dataset
from .training import (
    TrainConfig,
    evaluate_predictions,
    predict,
    seed_everything,
    segmentation_crops,
    train_stage,
    world_predictions,
)

log = logging.getLogger("gridforecast")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(GridForecastError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p):
    p.add_argument("--config", help="INI config file ([run] profile, [grid], [gridgen], [sampler], [train])")
    p.add_argument("--profile", choices=("paper", "desk"), help="size preset applied before the config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gridforecast", description="Grid-based multimodal trajectory forecasting.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic scene + annotations")
    p.add_argument("--spec", default="crossroads", help="preset name or SceneSpec JSON file")
    p.add_argument("--agents", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scene-id", default="synth")
    p.add_argument("--split", default="train", choices=("train", "val", "test"))
    p.add_argument("--out", required=True)

    p = sub.add_parser("ingest", help="annotations + scenes -> sample store")
    _common(p)
    p.add_argument("--manifest", required=True, help="scene manifest: id image [labels] [annotations]")
    p.add_argument("--splits", help="split manifest: id split")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--annotation-stride", type=int, help="frame step of the raw annotations (default: inferred)")
    p.add_argument("--limit", type=int, help="keep at most this many samples (seeded subset)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pretrain-scene", help="segmentation pretraining of the scene encoder")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--crops", type=int, default=64, help="random crops per scene")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--n-classes", type=int, default=3)
    p.add_argument("--out", required=True, help="checkpoint path")

    for name, help_ in (("train-gridgen", "train the probability-grid generator"),
                        ("train-sampler", "train the trajectory sampler on a frozen generator")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--train", required=True, help="training sample store")
        p.add_argument("--val", help="validation sample store")
        p.add_argument("--run-dir", required=True, help=f"output directory (relative to ${RUNS_ENV} if set)")
        if name == "train-gridgen":
            p.add_argument("--scene-encoder", help="pretrained scene-encoder checkpoint")
        else:
            p.add_argument("--gridgen", required=True, help="trained grid-generator checkpoint")

    p = sub.add_parser("evaluate", help="metrics report (mADE, mFDE, CS, obstacle-free rate)")
    p.add_argument("--store", required=True)
    p.add_argument("--gridgen")
    p.add_argument("--sampler")
    p.add_argument("--gt-as-prediction", action="store_true",
                   help="score the ground truth itself (K=1) instead of model output")
    p.add_argument("--manifest", help="scene manifest with label maps (default: the store's)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("render", help="overlay + heatmap figures for one sample")
    p.add_argument("--store", required=True)
    p.add_argument("--sample", type=int, required=True)
    p.add_argument("--gridgen")
    p.add_argument("--sampler")
    p.add_argument("--zoom", type=int, default=4)
    p.add_argument("--out", required=True)
    return parser


def _echo(out_dir, args, cfg=None, name="config_echo.ini"):
    command = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}
    write_config_echo(Path(out_dir) / name, cfg, command=command)


def _config(args):
    return load_config(args.config, args.overrides, args.profile)


def cmd_synth(args):
    if args.agents < 1:
        raise ConfigError("--agents must be >= 1")
    spec = load_scene_spec(args.spec)
    out = resolve_run_dir(args.out)
    write_dataset(out, spec, args.agents, args.seed, args.scene_id, args.split)
    (out / f"{args.scene_id}_spec.json").write_text(json.dumps(spec.to_dict(), indent=1))
    _echo(out, args, name=f"{args.scene_id}_config_echo.ini")
    print(f"wrote scene {args.scene_id} to {out}")


def cmd_ingest(args):
    cfg = _config(args)
    registry = SceneRegistry.from_manifest(args.manifest)
    splits = read_split_manifest(args.splits) if args.splits else {}
    geom = GridGeometry(cfg.grid.n, cfg.grid.scale)
    samples = []
    for scene_id in registry:
        if args.split and splits.get(scene_id) != args.split:
            continue
        entry = registry.entries[scene_id]
        if entry.annotations is None:
            raise ConfigError(f"scene {scene_id} has no annotation file in the manifest")
        rows = parse_annotations(entry.annotations)
        tracks = build_tracks(rows, args.annotation_stride, scene_id)
        samples += window_samples(tracks, cfg.grid.stride_frames, geom, registry.image(scene_id),
                                  scene_id, cfg.grid.t_h, cfg.grid.t_f)
    if args.limit is not None and len(samples) > args.limit:
        idx = np.random.default_rng(args.seed).choice(len(samples), args.limit, replace=False)
        samples = [samples[i] for i in sorted(idx)]
    if not samples:
        raise ConfigError("no samples produced: tracks too short or split empty")
    out = resolve_run_dir(args.out)
    save_store(out, samples, {"scenes_manifest": str(Path(args.manifest).resolve()),
                              "geometry": {"n": geom.n, "scale": geom.scale}})
    _echo(out, args, cfg)
    print(f"{len(samples)} samples -> {out}")


def cmd_pretrain_scene(args):
    cfg = _config(args)
    seed_everything(cfg.train.seed)
    registry = SceneRegistry.from_manifest(args.manifest)
    geom = GridGeometry(cfg.grid.n, cfg.grid.scale)
    pairs = []
    for i, scene_id in enumerate(registry):
        labels = load_label_map(registry.label_path(scene_id))
        pairs += segmentation_crops(registry.image(scene_id), labels, geom, args.crops, seed=cfg.train.seed + i)
    encoder = build_scene_encoder(cfg.gridgen)
    pretrain_scene_encoder(encoder, pairs, args.n_classes, steps=args.steps, seed=cfg.train.seed)
    out = resolve_run_dir(args.out)
    save_checkpoint(out, encoder, cfg.gridgen, section="scene_encoder",
                    extra={"n_classes": args.n_classes, "steps": args.steps})
    _echo(out.parent, args, cfg, name=f"{out.stem}_config_echo.ini")
    print(f"scene encoder -> {out}")


def _train(args, stage):
    cfg = _config(args)
    train_cfg = TrainConfig.from_dict({**vars(cfg.train), "stage": stage})
    train_samples, _ = load_store(args.train)
    val_samples = load_store(args.val)[0] if args.val else None
    run_dir = resolve_run_dir(args.run_dir)
    seed_everything(train_cfg.seed)
    gridgen = None
    if stage == "gridgen":
        model = GridGenerator(cfg.gridgen)
        if args.scene_encoder:
            encoder, _ = load_checkpoint(args.scene_encoder, "scene_encoder")
            model.scene_encoder.load_state_dict(encoder.state_dict())
    else:
        gridgen, _ = load_checkpoint(args.gridgen, "gridgen")
        model = TrajectorySampler(cfg.sampler)
    result = train_stage(train_cfg, train_samples, model, val_samples, gridgen=gridgen, run_dir=run_dir)
    _echo(run_dir, args, cfg, name=f"{stage}_config_echo.ini")
    if result.curve:
        viz.save_figure(viz.plot_loss_curve(result.curve, stage), run_dir / f"{stage}_loss_curve.png")
    print(f"{stage}: {len(result.curve)} epochs, best loss {result.best_val:.5f} -> {result.checkpoint}")


def _label_maps(manifest, samples):
    if not manifest:
        return {}
    registry = SceneRegistry.from_manifest(manifest)
    maps = {}
    for scene_id in {s.metadata.get("scene_id", "") for s in samples}:
        entry = registry.entries.get(scene_id)
        if entry is not None and entry.labels is not None:
            maps[scene_id] = load_label_map(entry.labels)
    return maps


def _models(args):
    if not (args.gridgen and args.sampler):
        return None, None
    gridgen, _ = load_checkpoint(args.gridgen, "gridgen")
    sampler, _ = load_checkpoint(args.sampler, "sampler")
    return gridgen, sampler


def cmd_evaluate(args):
    samples, meta = load_store(args.store)
    if args.gt_as_prediction:
        preds = [(np.asarray(s.future_xy) + np.asarray(s.anchor_world))[None] for s in samples]
    else:
        gridgen, sampler = _models(args)
        if gridgen is None:
            raise ConfigError("evaluate needs --gridgen and --sampler, or --gt-as-prediction")
        preds = world_predictions(predict(gridgen, sampler, samples), samples)
    label_maps = _label_maps(args.manifest or meta.get("scenes_manifest"), samples)
    report, rows = evaluate_predictions(samples, preds, label_maps)
    out = resolve_run_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "metrics.json", report)
    with open(out / "per_sample.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["scene_id", "agent_id", "frame", "made_px", "mfde_px"])
        writer.writeheader()
        writer.writerows(rows)
    if label_maps:
        viz.save_figure(viz.plot_cs_report(report), out / "cs_breakdown.png")
    _echo(out, args)
    for key in sorted(report):
        print(f"{key}={report[key]}")


def cmd_render(args):
    samples, _ = load_store(args.store)
    if not 0 <= args.sample < len(samples):
        raise ConfigError(f"--sample must lie in [0, {len(samples)})")
    sample = samples[args.sample]
    gridgen, sampler = _models(args)
    if gridgen is not None:
        probs = forward_probabilities(sample, gridgen)
        pred = sample_trajectories(probs, sampler)
    else:
        probs = sample.target_grids.astype(np.float64)
        pred = None
    out = resolve_run_dir(args.out)
    overlay = viz.save_image(viz.render_overlay(sample, pred, zoom=args.zoom),
                             out / f"overlay_{args.sample:05d}.png")
    heat = viz.save_figure(viz.render_heatmaps(probs), out / f"heatmaps_{args.sample:05d}.png")
    _echo(out, args, name=f"render_{args.sample:05d}_config_echo.ini")
    print(f"{overlay}\n{heat}")


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "pretrain-scene": cmd_pretrain_scene,
    "train-gridgen": lambda a: _train(a, "gridgen"),
    "train-sampler": lambda a: _train(a, "sampler"),
    "evaluate": cmd_evaluate,
    "render": cmd_render,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(max(1, torch.get_num_threads()))
    try:
        COMMANDS[args.command](args)
    except GridForecastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
