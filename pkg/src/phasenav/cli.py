"""Command-line front end for every pipeline stage.

One subcommand per stage, machine-first output: data goes to files
under ``--out`` (or standard output), diagnostics go to the error
stream, and identical (config, seed) pairs produce byte-identical
files. Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .channel import read_labeled_dataset, write_labeled_dataset
from .classifier import TrainConfig, evaluate, load_checkpoint, save_checkpoint, train, write_history_csv
from .evaluation import TrajectoryRecord, ate, format_metrics, rpe_trans
from .experiments import (
    config_hash,
    default_dataset_config,
    default_umi_config,
    generate_dataset,
    reference_frames,
    run_exclusion_study,
    run_fusion_study,
    run_umi_ranging,
    simulate_link,
    write_block_cdf,
    write_manifest,
)
from .positioning import LocalizeConfig, invalid_fix, localize_epoch, trilaterate, write_fix_log
from .ranging import default_k_schedule, range_cascade, write_ranging_csv
from .scenario import ObstacleMap, Rect, coverage_grid, load_scenario, save_scenario


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage problems with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _emit(pairs: dict, fmt: str, stream=None) -> None:
    stream = stream if stream is not None else sys.stdout
    if fmt == "csv":
        keys = list(pairs)
        print(",".join(keys), file=stream)
        print(",".join(str(pairs[k]) for k in keys), file=stream)
    else:
        for key, value in pairs.items():
            print(f"{key} {value}", file=stream)


def _note(args, message: str) -> None:
    if args.verbose:
        print(message, file=sys.stderr)


def _load_config(args):
    if args.config:
        return load_scenario(args.config)
    return default_umi_config(args.seed)


def _outpath(args, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _seeded(config, args):
    """Config with the command-line seed folded in (flag wins)."""
    if args.seed is not None:
        config.rng_seed = args.seed
    return config


def _default_region(trps, pad: float = 10.0) -> Rect:
    sites = np.array([t.position for t in trps])
    return Rect(
        xmin=float(sites[:, 0].min() - pad),
        ymin=float(sites[:, 1].min() - pad),
        xmax=float(sites[:, 0].max() + pad),
        ymax=float(sites[:, 1].max() + pad),
    )


# --- subcommand handlers ----------------------------------------------------


def cmd_coverage(args) -> int:
    config = _load_config(args)
    obstacles = ObstacleMap.from_file(args.obstacles) if args.obstacles else ObstacleMap(())
    region = (
        Rect(*args.region) if args.region else _default_region(config.trp_list)
    )
    grid = coverage_grid(obstacles, config.trp_list, args.cell_size, region)
    path = _outpath(args, "coverage.csv")
    grid.to_csv(path)
    _note(args, f"coverage grid {grid.counts.shape} -> {path}")
    _emit(
        {
            "cells": grid.counts.size,
            "fraction_positionable": grid.fraction_positionable,
            "fraction_any_los": grid.fraction_with_at_least(1),
        },
        args.format,
    )
    return 0


def cmd_simulate(args) -> int:
    config = _seeded(
        _load_config(args) if args.config else default_dataset_config(args.seed or 0), args
    )
    labels, tau_ns, mags = generate_dataset(config, args.samples, jobs=args.jobs)
    path = _outpath(args, "dataset.csv")
    write_labeled_dataset(path, labels, tau_ns * 1e-9, mags)
    _note(args, f"{args.samples} labeled links -> {path}")
    _emit(
        {"samples": int(labels.size), "los_fraction": float(np.mean(labels))},
        args.format,
    )
    return 0


def cmd_range(args) -> int:
    config = _seeded(_load_config(args), args)
    rng = np.random.default_rng(np.random.SeedSequence(config.rng_seed))
    refs = reference_frames(config)
    schedule = default_k_schedule(config.num_subcarriers, config.comb_size)
    bound = max(config.max_link_distance, 1.0) * 1.5
    force = {"los": True, "nlos": False, "mixed": None}[args.state]
    results = []
    summary = {}
    for trp in config.trp_list:
        frame, _ = simulate_link(config, trp, config.ue_init, refs[trp.id], rng, force)
        cascade = range_cascade(frame, schedule, bound, trp_id=trp.id)
        results.append(cascade)
        truth = float(np.linalg.norm(np.asarray(trp.position) - config.ue_init))
        summary[f"{trp.id}_m"] = cascade.distance
        summary[f"{trp.id}_true_m"] = truth
    path = _outpath(args, "ranges.csv")
    write_ranging_csv(path, results)
    _note(args, f"cascade levels -> {path}")
    _emit(summary, args.format)
    return 0


def cmd_train(args) -> int:
    labels, _, mags = read_labeled_dataset(args.data)
    config = TrainConfig(
        max_epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        early_stop_patience=args.patience,
        seed=args.seed if args.seed is not None else 0,
    )
    params, history, (train_idx, val_idx, test_idx) = train(mags, labels, config)
    ckpt = _outpath(args, "model.ckpt")
    save_checkpoint(params, ckpt)
    write_history_csv(history, _outpath(args, "history.csv"))
    report = evaluate(params, mags[test_idx], labels[test_idx])
    _note(
        args,
        f"trained on {train_idx.size}/{val_idx.size}/{test_idx.size} "
        f"train/val/test rows -> {ckpt}",
    )
    _emit(
        {
            "epochs_run": len(history),
            "test_accuracy": report.accuracy,
            "test_auc": report.auc,
            "nlos_recall": report.nlos_recall,
            "los_recall": report.los_recall,
        },
        args.format,
    )
    return 0


def cmd_classify(args) -> int:
    params = load_checkpoint(args.model)
    labels, _, mags = read_labeled_dataset(args.data)
    report = evaluate(params, mags, labels, threshold=args.threshold)
    _emit(
        {
            "samples": report.n,
            "accuracy": report.accuracy,
            "auc": report.auc,
            "nlos_recall": report.nlos_recall,
            "los_recall": report.los_recall,
        },
        args.format,
    )
    return 0


def cmd_localize(args) -> int:
    config = _seeded(_load_config(args), args)
    params = load_checkpoint(args.model) if args.model else None
    ue = np.asarray(args.ue, dtype=float) if args.ue else np.asarray(config.ue_init)
    rng = np.random.default_rng(np.random.SeedSequence(config.rng_seed))
    refs = reference_frames(config)
    schedule = default_k_schedule(config.num_subcarriers, config.comb_size)
    lconfig = LocalizeConfig(
        trps=config.trp_list,
        k_schedule=schedule,
        max_distance=max(config.max_link_distance, 1.0) * 1.5,
        mode=args.mode,
    )
    fixes = []
    for _ in range(args.epochs):
        frames, states = {}, {}
        for trp in config.trp_list:
            frame, ch = simulate_link(config, trp, ue, refs[trp.id], rng)
            frames[trp.id] = frame
            states[trp.id] = ch.is_los
        if params is not None:
            fix = localize_epoch(frames, params, lconfig)
        else:
            # no classifier: fall back to ground-truth link exclusion
            survivors = sorted(i for i in frames if states[i])
            excluded = sorted(i for i in frames if not states[i])
            if len(survivors) < 3:
                fix = invalid_fix("insufficient LOS links", args.mode, excluded)
            else:
                ranges = [
                    range_cascade(frames[i], schedule, lconfig.max_distance, trp_id=i).final
                    for i in survivors
                ]
                fix = trilaterate(ranges, config.trp_list, mode=args.mode)
                fix.excluded = excluded
        fixes.append(fix)
    path = _outpath(args, "fixes.csv")
    write_fix_log(path, range(args.epochs), fixes)
    valid = [f for f in fixes if f.valid]
    _note(args, f"{len(valid)}/{len(fixes)} valid fixes -> {path}")
    summary = {"epochs": len(fixes), "valid": len(valid)}
    if valid:
        summary["mean_error_2d_m"] = float(np.mean([f.error_2d(ue) for f in valid]))
    _emit(summary, args.format)
    return 0


def cmd_fuse(args) -> int:
    result = run_fusion_study(seed=args.seed if args.seed is not None else 0, duration=args.duration)
    result.truth.to_csv(_outpath(args, "truth.csv"))
    for name, traj in result.trajectories.items():
        traj.to_csv(_outpath(args, f"{name}.csv"))
    pairs = {"cpp_duty": result.cpp_duty, "cpp_fixes": result.cpp_fixes}
    for name, metrics in result.metrics.items():
        for key, value in metrics.items():
            pairs[f"{name}_{key}"] = value
    with open(_outpath(args, "metrics.txt"), "w") as fh:
        _emit(pairs, "kv", stream=fh)
    _emit(pairs, args.format)
    return 0


def cmd_evaluate(args) -> int:
    est = TrajectoryRecord.from_csv(args.est)
    ref = TrajectoryRecord.from_csv(args.gt)
    t_err, r_err = rpe_trans(est, ref, args.delta)
    print(
        format_metrics({"ate_m": ate(est, ref), "rpe_trans_m": t_err, "rpe_rot_deg": r_err}),
        end="",
    )
    return 0


def cmd_study(args) -> int:
    seed = args.seed if args.seed is not None else 0
    if args.name == "umi":
        config = _seeded(_load_config(args), args)
        result = run_umi_ranging(config, args.iterations, jobs=args.jobs)
        stamp = f"config_hash={config_hash(config)}"
        outputs = []
        for tid in result.trp_ids:
            path = _outpath(args, f"ranges_{tid}.csv")
            with open(path, "w") as fh:
                fh.write(f"# {stamp}\n")
                fh.write("distance_m,is_los\n")
                for d, s in zip(result.distances[tid], result.los_states[tid]):
                    fh.write(f"{d!r},{int(s)}\n")
            outputs.append(os.path.basename(path))
        write_manifest(_outpath(args, "manifest.txt"), "umi", config, config.rng_seed, outputs)
        _emit(result.summary(), args.format)
    elif args.name == "exclusion":
        config = _seeded(_load_config(args), args)
        params = load_checkpoint(args.model) if args.model else None
        result = run_exclusion_study(
            config, args.epochs, classifier_params=params, jobs=args.jobs
        )
        stamp = f"config_hash={config_hash(config)}"
        outputs = []
        pairs = {}
        for name, block in result.blocks.items():
            if block.stats is None:
                continue
            path = _outpath(args, f"cdf_{name}.csv")
            write_block_cdf(path, block.stats, header_comment=stamp)
            outputs.append(os.path.basename(path))
            for level, value in block.stats.percentiles_2d.items():
                pairs[f"{name}_p{level}_2d_m"] = value
        write_manifest(
            _outpath(args, "manifest.txt"), "exclusion", config, config.rng_seed, outputs
        )
        _emit(pairs, args.format)
    else:  # fusion
        result = run_fusion_study(seed=seed)
        config = default_umi_config(seed)
        outputs = []
        for name, traj in result.trajectories.items():
            path = _outpath(args, f"{name}.csv")
            traj.to_csv(path)
            outputs.append(os.path.basename(path))
        result.truth.to_csv(_outpath(args, "truth.csv"))
        outputs.append("truth.csv")
        write_manifest(_outpath(args, "manifest.txt"), "fusion", config, seed, outputs)
        pairs = {"cpp_duty": result.cpp_duty}
        for name, metrics in result.metrics.items():
            pairs[f"{name}_ate_m"] = metrics["ate_m"]
        _emit(pairs, args.format)
    return 0


def cmd_init_config(args) -> int:
    config = default_umi_config(args.seed if args.seed is not None else 0)
    path = _outpath(args, "scenario.yaml")
    save_scenario(config, path)
    _note(args, f"default scenario -> {path}")
    return 0


# --- wiring -----------------------------------------------------------------


def _add_common(sub):
    sub.add_argument("--config", help="scenario YAML (defaults to the built-in deployment)")
    sub.add_argument("--seed", type=int, help="overrides the scenario seed")
    sub.add_argument("--out", default=".", help="output directory (created if missing)")
    sub.add_argument("--format", choices=("csv", "kv"), default="kv", help="summary format")
    sub.add_argument("--verbose", action="store_true", help="progress notes on stderr")
    sub.add_argument("--jobs", type=int, default=1, help="worker processes for studies")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phasenav", description=__doc__)
    parser.add_argument("--version", action="version", version=f"phasenav {__version__}")
    commands = parser.add_subparsers(dest="command", metavar="command")

    sub = commands.add_parser("coverage", help="LOS site count per map cell")
    _add_common(sub)
    sub.add_argument("--obstacles", help="box file: xmin ymin zmin xmax ymax zmax per line")
    sub.add_argument("--cell-size", type=float, default=5.0)
    sub.add_argument(
        "--region", type=float, nargs=4, metavar=("XMIN", "YMIN", "XMAX", "YMAX")
    )
    sub.set_defaults(func=cmd_coverage)

    sub = commands.add_parser("simulate", help="generate a labeled link dataset")
    _add_common(sub)
    sub.add_argument("--samples", type=int, default=1000)
    sub.set_defaults(func=cmd_simulate)

    sub = commands.add_parser("range", help="cascade ranging for one epoch")
    _add_common(sub)
    sub.add_argument("--state", choices=("mixed", "los", "nlos"), default="los")
    sub.set_defaults(func=cmd_range)

    sub = commands.add_parser("train", help="train the link classifier")
    _add_common(sub)
    sub.add_argument("--data", required=True, help="labeled dataset CSV")
    sub.add_argument("--epochs", type=int, default=30)
    sub.add_argument("--batch-size", type=int, default=64)
    sub.add_argument("--lr", type=float, default=1e-3)
    sub.add_argument("--patience", type=int, default=10)
    sub.set_defaults(func=cmd_train)

    sub = commands.add_parser("classify", help="score a dataset with a trained model")
    _add_common(sub)
    sub.add_argument("--model", required=True, help="checkpoint file")
    sub.add_argument("--data", required=True, help="labeled dataset CSV")
    sub.add_argument("--threshold", type=float, default=0.5)
    sub.set_defaults(func=cmd_classify)

    sub = commands.add_parser("localize", help="position fixes from simulated epochs")
    _add_common(sub)
    sub.add_argument("--model", help="classifier checkpoint (omit for oracle exclusion)")
    sub.add_argument("--ue", type=float, nargs=3, metavar=("X", "Y", "Z"))
    sub.add_argument("--epochs", type=int, default=1)
    sub.add_argument("--mode", choices=("2D", "3D"), default="2D")
    sub.set_defaults(func=cmd_localize)

    sub = commands.add_parser("fuse", help="IMU/VO/CPP trajectory fusion run")
    _add_common(sub)
    sub.add_argument("--duration", type=float, default=120.0)
    sub.set_defaults(func=cmd_fuse)

    sub = commands.add_parser("evaluate", help="trajectory metrics against a reference")
    _add_common(sub)
    sub.add_argument("--est", required=True, help="estimated trajectory CSV")
    sub.add_argument("--gt", required=True, help="reference trajectory CSV")
    sub.add_argument("--delta", type=int, default=1, help="relative-pose index offset")
    sub.set_defaults(func=cmd_evaluate)

    sub = commands.add_parser("study", help="run a scripted end-to-end study")
    _add_common(sub)
    sub.add_argument("name", choices=("umi", "exclusion", "fusion"))
    sub.add_argument("--iterations", type=int, default=1000, help="umi study draws")
    sub.add_argument("--epochs", type=int, default=1000, help="exclusion study epochs")
    sub.add_argument("--model", help="classifier checkpoint for the filtered block")
    sub.set_defaults(func=cmd_study)

    sub = commands.add_parser("init-config", help="write the built-in scenario YAML")
    _add_common(sub)
    sub.set_defaults(func=cmd_init_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"phasenav: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
