"""Command-line entry point.

Every command reads one flat config file (optionally overridden with
``--set key=value``), writes a ``manifest.json`` recording the resolved
configuration plus package versions into its output directory, and exits 0
on success.  Failures surface as a single ``error: ...`` line on stderr
with exit code 1; unknown commands exit 2 with usage text.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import platform
import sys
from pathlib import Path

import numpy as np
import scipy
import torch

from . import __version__, config as cfgmod
from .errors import FptcError, IngestionError
from .evaluation import (ablation_suite, density_sweep, evaluate_split,
                         export_radio_map, load_pipeline_splits)
from .features import sample_measurements
from .scene import (DatasetSplits, SPLIT_NAMES, list_scene_ids, load_scene,
                    save_scene, split_dataset)
from .synth import synthesize_scene
from .training import (TRAINING_LOG_FILE, correct_radio_map, derive_seed,
                       load_checkpoint, predict_radio_map, save_checkpoint,
                       train_stage)

SPLITS_FILE = "splits.json"
MANIFEST_FILE = "manifest.json"

# seed-derivation tags for per-scene synthesis streams
_TAG_LAYOUT, _TAG_ORACLE, _TAG_EXPORT_SAMPLES = 23, 29, 31


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fptc",
        description="Radio-map construction: predict from environment "
                    "rasters, then correct with sparse measurements.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--data", default=None, help="dataset directory")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="global seed")

    p = sub.add_parser("synth", help="generate a synthetic scene dataset")
    common(p)
    p.add_argument("--count", type=int, default=None,
                   help="number of scenes to generate")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="validate a scene directory tree")
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="assign scenes to the five pipeline splits")
    common(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train-rmp", help="train the prediction network")
    common(p)
    p.add_argument("--splits", default=None, help="split manifest path")
    p.set_defaults(func=cmd_train_rmp)

    p = sub.add_parser("train-rmc", help="train the correction network")
    common(p)
    p.add_argument("--splits", default=None, help="split manifest path")
    p.add_argument("--rmp", default=None, help="prediction checkpoint directory")
    p.set_defaults(func=cmd_train_rmc)

    p = sub.add_parser("eval", help="evaluate checkpoints on a split")
    common(p)
    p.add_argument("--splits", default=None, help="split manifest path")
    p.add_argument("--rmp", default=None, help="prediction checkpoint directory")
    p.add_argument("--rmc", default=None, help="correction checkpoint directory")
    p.add_argument("--split", default=None, help="split name to evaluate")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="retrain with zeroed input channels")
    common(p)
    p.add_argument("--splits", default=None, help="split manifest path")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-density",
                       help="correction quality vs. measurement density")
    common(p)
    p.add_argument("--splits", default=None, help="split manifest path")
    p.add_argument("--rmp", default=None, help="prediction checkpoint directory")
    p.add_argument("--rmc", default=None, help="correction checkpoint directory")
    p.set_defaults(func=cmd_sweep_density)

    p = sub.add_parser("export-maps", help="write per-scene PNG and dBm CSV maps")
    common(p)
    p.add_argument("--splits", default=None, help="split manifest path")
    p.add_argument("--rmp", default=None, help="prediction checkpoint directory")
    p.add_argument("--rmc", default=None, help="correction checkpoint directory")
    p.add_argument("--split", default=None, help="split name to export")
    p.set_defaults(func=cmd_export_maps)

    return parser


def _load_config(args) -> cfgmod.RunConfig:
    overrides = list(args.overrides)
    if args.data is not None:
        overrides.append(f"data.dir={args.data}")
    if args.out is not None:
        overrides.append(f"out.dir={args.out}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "count", None) is not None:
        overrides.append(f"synth.count={args.count}")
    return cfgmod.load_run_config(args.config, overrides)


def _out_dir(cfg) -> Path:
    out = Path(cfg["out.dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, cfg) -> None:
    manifest = {
        "command": command,
        "config": cfg.as_dict(),
        "overrides": {k: (list(v) if isinstance(v, tuple) else v)
                      for k, v in cfg.overrides.items()},
        "seed": cfg.seed,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "torch": torch.__version__,
            "fptc": __version__,
        },
    }
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2) + "\n")


def _load_splits(args, cfg) -> DatasetSplits:
    path = Path(args.splits) if args.splits else Path(cfg["data.dir"]) / SPLITS_FILE
    if not path.is_file():
        raise IngestionError(f"missing split manifest: {path}")
    return DatasetSplits.from_dict(json.loads(path.read_text()))


def _named_split(splits: DatasetSplits, name: str):
    if name not in SPLIT_NAMES:
        raise IngestionError(f"unknown split '{name}' (expected one of "
                             f"{', '.join(SPLIT_NAMES)})")
    return getattr(splits, name)


def _load_split_scenes(cfg, ids):
    root = Path(cfg["data.dir"])
    return [load_scene(root / sid, scene_id=sid) for sid in ids]


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    grid = cfgmod.grid_spec(cfg)
    base_sp = cfgmod.synth_params(cfg)
    base_op = cfgmod.oracle_params(cfg)
    count = cfg["synth.count"]
    for i in range(count):
        sid = f"scene_{i:05d}"
        scene = synthesize_scene(
            grid,
            dataclasses.replace(base_sp, seed=derive_seed(cfg.seed, _TAG_LAYOUT, i)),
            dataclasses.replace(base_op, seed=derive_seed(cfg.seed, _TAG_ORACLE, i)),
            scene_id=sid)
        save_scene(scene, out / sid)
    _write_manifest(out, "synth", cfg)
    print(f"wrote {count} scenes under {out}")
    return 0


def cmd_ingest(args) -> int:
    cfg = _load_config(args)
    data = Path(cfg["data.dir"])
    ids = list_scene_ids(data)
    if not ids:
        raise IngestionError(f"no scene directories under {data}")
    for sid in ids:
        load_scene(data / sid, scene_id=sid)
    out = _out_dir(cfg)
    _write_manifest(out, "ingest", cfg)
    print(f"validated {len(ids)} scenes under {data}")
    return 0


def cmd_split(args) -> int:
    cfg = _load_config(args)
    ids = list_scene_ids(cfg["data.dir"])
    splits = split_dataset(ids, cfg.seed)
    out = _out_dir(cfg)
    (out / SPLITS_FILE).write_text(json.dumps(splits.as_dict(), indent=2) + "\n")
    _write_manifest(out, "split", cfg)
    sizes = ", ".join(f"{n}={len(getattr(splits, n))}" for n in SPLIT_NAMES)
    print(f"wrote {out / SPLITS_FILE} ({sizes})")
    return 0


def _run_training(args, cfg, stage: str, priors=None):
    splits = _load_splits(args, cfg)
    train_scenes = _load_split_scenes(cfg, getattr(splits, f"train_{stage}"))
    val_scenes = _load_split_scenes(cfg, getattr(splits, f"val_{stage}"))
    out = _out_dir(cfg)
    stage_dir = out / stage
    ckpt = train_stage(
        train_scenes, val_scenes, cfgmod.train_config(cfg, stage),
        norm_range=cfgmod.norm_range(cfg), rbf_config=cfgmod.rbf_config(cfg),
        gen_spec=cfgmod.generator_spec(cfg, stage),
        disc_spec=cfgmod.discriminator_spec(cfg, stage),
        priors=priors, log_path=stage_dir / TRAINING_LOG_FILE)
    save_checkpoint(ckpt, stage_dir)
    return ckpt, stage_dir


def cmd_train_rmp(args) -> int:
    cfg = _load_config(args)
    ckpt, stage_dir = _run_training(args, cfg, "predict")
    _write_manifest(_out_dir(cfg), "train-rmp", cfg)
    print(f"saved {stage_dir} (best epoch {ckpt.epoch}, "
          f"val rmse {ckpt.best_val_rmse:.4f} dBm)")
    return 0


def cmd_train_rmc(args) -> int:
    cfg = _load_config(args)
    rmp_dir = Path(args.rmp) if args.rmp else _out_dir(cfg) / "predict"
    priors = load_checkpoint(rmp_dir)
    ckpt, stage_dir = _run_training(args, cfg, "correct", priors=priors)
    _write_manifest(_out_dir(cfg), "train-rmc", cfg)
    print(f"saved {stage_dir} (best epoch {ckpt.epoch}, "
          f"val rmse {ckpt.best_val_rmse:.4f} dBm)")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    rmp = load_checkpoint(Path(args.rmp) if args.rmp else out / "predict")
    rmc = load_checkpoint(args.rmc) if args.rmc else None
    splits = _load_splits(args, cfg)
    split_name = args.split or cfg["eval.split"]
    scenes = _load_split_scenes(cfg, _named_split(splits, split_name))
    report = evaluate_split(rmp, rmc, scenes, norm_range=cfgmod.norm_range(cfg),
                            seed=cfg.seed, out_dir=out)
    _write_manifest(out, "eval", cfg)
    for rec in report.means:
        print(f"{split_name} {rec.stage}: rmse={rec.rmse_dbm:.4f} dBm "
              f"mae={rec.mae_dbm:.4f} dBm ssim={rec.ssim:.4f} "
              f"psnr={rec.psnr_db:.4f} dB")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    splits = load_pipeline_splits(cfg["data.dir"], _load_splits(args, cfg))
    rows = ablation_suite(
        splits, cfgmod.train_config(cfg, "predict"),
        cfgmod.train_config(cfg, "correct"),
        norm_range=cfgmod.norm_range(cfg), rbf_config=cfgmod.rbf_config(cfg),
        gen_spec_predict=cfgmod.generator_spec(cfg, "predict"),
        disc_spec_predict=cfgmod.discriminator_spec(cfg, "predict"),
        gen_spec_correct=cfgmod.generator_spec(cfg, "correct"),
        disc_spec_correct=cfgmod.discriminator_spec(cfg, "correct"),
        eval_seed=cfg.seed, out_dir=out)
    _write_manifest(out, "ablate", cfg)
    for row in rows:
        print(f"{row.stage} {row.label}: rmse={row.metrics.rmse_dbm:.4f} dBm")
    return 0


def cmd_sweep_density(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    rmp = load_checkpoint(Path(args.rmp) if args.rmp else out / "predict")
    retrain = cfg["sweep.retrain"]
    rmc = None
    if args.rmc:
        rmc = load_checkpoint(args.rmc)
    elif not retrain:
        rmc = load_checkpoint(out / "correct")
    splits = load_pipeline_splits(cfg["data.dir"], _load_splits(args, cfg))
    points = density_sweep(
        cfg["sweep.percentages"], splits, rmp,
        cfgmod.train_config(cfg, "correct"),
        norm_range=cfgmod.norm_range(cfg), rbf_config=cfgmod.rbf_config(cfg),
        gen_spec_correct=cfgmod.generator_spec(cfg, "correct"),
        disc_spec_correct=cfgmod.discriminator_spec(cfg, "correct"),
        retrain=retrain, rmc=rmc, eval_seed=cfg.seed, out_dir=out)
    _write_manifest(out, "sweep-density", cfg)
    for pt in points:
        print(f"{pt.percentage}% ({pt.measurement_count} points): "
              f"rmse={pt.metrics.rmse_dbm:.4f} dBm")
    return 0


def cmd_export_maps(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    rmp = load_checkpoint(Path(args.rmp) if args.rmp else out / "predict")
    rmc = load_checkpoint(args.rmc) if args.rmc else None
    splits = _load_splits(args, cfg)
    split_name = args.split or cfg["eval.split"]
    scenes = _load_split_scenes(cfg, _named_split(splits, split_name))
    rng = cfgmod.norm_range(cfg)
    maps_dir = out / "maps"
    maps_dir.mkdir(parents=True, exist_ok=True)
    for idx, scene in enumerate(scenes):
        p_pre = predict_radio_map(rmp, scene)
        export_radio_map(p_pre, rng, maps_dir / f"{scene.scene_id}_pre.png",
                         maps_dir / f"{scene.scene_id}_pre.csv")
        if scene.ground_truth is not None:
            export_radio_map(scene.ground_truth, rng,
                             maps_dir / f"{scene.scene_id}_gt.png",
                             maps_dir / f"{scene.scene_id}_gt.csv")
        if rmc is not None:
            mset = sample_measurements(
                scene, rmc.train_config.measurement_count,
                derive_seed(cfg.seed, _TAG_EXPORT_SAMPLES, idx))
            p_cor = correct_radio_map(rmc, p_pre, mset)
            export_radio_map(p_cor, rng, maps_dir / f"{scene.scene_id}_cor.png",
                             maps_dir / f"{scene.scene_id}_cor.csv")
    _write_manifest(out, "export-maps", cfg)
    print(f"wrote maps for {len(scenes)} scenes under {maps_dir}")
    return 0


# ---------------------------------------------------------------------------

def dispatch(argv=None) -> int:
    """Run one command; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except FptcError as exc:
        message = " ".join(str(exc).split())
        print(f"error: {message}", file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
