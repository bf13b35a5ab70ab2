"""Command-line interface.

Subcommands: ``dataset gen``, ``train``, ``eval-static``, ``simulate``,
``report``. Every subcommand takes ``--seed``, ``--out``, and ``--config``;
outputs land under a timestamped run directory unless ``--out`` names one.
``simulate`` exits nonzero if any episode terminated in lane departure
unless ``--allow-failures`` is given.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import data as dt
from . import models as md
from . import perception as pc
from . import simulate as sim
from . import track as tk
from .config import RunConfig, load_config


def _out_dir(args, kind: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        out = Path("out") / f"{kind}-{stamp}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig.default()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", type=str, default=None, help="output directory (default: timestamped under out/)")
    parser.add_argument("--config", type=str, default=None, help="run config JSON (default: built-in defaults)")


def cmd_dataset_gen(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(args, "dataset")
    ds_cfg = cfg.dataset
    rig = dt.CameraRig(ds_cfg.camera_height, ds_cfg.camera_pitch, ds_cfg.camera_hfov)
    manifest = dt.make_dataset(
        out,
        n=args.n if args.n is not None else ds_cfg.n,
        seed=cfg.seed,
        class_balance=dt.ClassBalance(ds_cfg.c1_balance, ds_cfg.c2_balance),
        resolution=ds_cfg.resolution,
        rig=rig,
        lane_width=ds_cfg.lane_width,
        split_ratio=ds_cfg.split_ratio,
        theta_max=ds_cfg.theta_max,
    )
    print(f"wrote {manifest}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(args, "train")
    dataset = dt.load_dataset(args.dataset)
    training = dataset.training_set("train")
    model = md.build_model(cfg.model, seed=cfg.seed)
    reports = []
    stages = ("pose_only", "joint") if args.stage == "both" else (args.stage,)
    for stage in stages:
        schedule = cfg.pose_schedule if stage == "pose_only" else cfg.joint_schedule
        report = md.train(model, training, stage, schedule, seed=cfg.seed, loss_weights=cfg.model.loss_weights)
        csv_path = out / f"train_{stage}.csv"
        report.to_csv(csv_path)
        reports.append(report)
        print(f"{stage}: {report.steps} steps, final total loss {report.final_total:.6f} -> {csv_path}")
    ckpt = out / "model.ckpt"
    model.save(ckpt)
    print(f"wrote {ckpt}")
    return 0


def cmd_eval_static(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(args, "eval")
    dataset = dt.load_dataset(args.dataset)
    model = md.Model.load(args.model)
    report = sim.static_eval(model, dataset, split=args.split)
    sim.metrics_to_csv(out / "metrics.csv", [report])
    complexity = md.count_complexity(model)
    print(
        f"params {complexity.params}  macs {complexity.macs}  fps {complexity.fps:.1f}  "
        f"config {complexity.config_hash}"
    )
    print(
        f"seg acc {report.seg_accuracy:.4f}  precision {report.seg_precision:.4f}  "
        f"recall {report.seg_recall:.4f}  f1 {report.seg_f1:.4f}"
    )
    print(
        f"heading MAE {report.heading_mae:.5f} rad  C1 acc {report.c1_accuracy:.4f}  "
        f"C2 acc {report.c2_accuracy:.4f}"
    )
    print(f"wrote {out / 'metrics.csv'}")
    return 0


def cmd_simulate(args) -> int:
    if args.print_defaults:
        sys.stdout.write(RunConfig.default().to_json())
        return 0
    cfg = _load_run_config(args)
    out = _out_dir(args, "sim")
    track = tk.parse_track_spec(args.track or cfg.track)
    episode_cfg = cfg.episode
    episode_cfg.seed = cfg.seed
    if args.v_ref is not None:
        episode_cfg.v_ref = args.v_ref
    cfg.noise.seed = cfg.seed

    perceptor_kind = args.perceptor or cfg.perceptor
    if perceptor_kind == "nn":
        model_path = args.model or cfg.model_path
        if not model_path:
            print("error: nn perceptor needs --model or config model_path", file=sys.stderr)
            return 2
        model = md.Model.load(model_path)
        theta_norm = args.theta_norm
        if theta_norm is None and args.dataset:
            theta_norm = dt.load_dataset(args.dataset).theta_norm
        perceptor = pc.NNPerceptor(model, theta_norm or 0.1, cfg.path_predict)
    else:
        perceptor = pc.GroundTruthPerceptor(cfg.noise)

    log = sim.run_episode(track, perceptor, cfg.stanley, cfg.pi, cfg.plant, episode_cfg)
    metrics = sim.episode_metrics(log, episode_cfg.metric_speed_floor)
    files = sim.emit_report([log], [metrics], out, tracks=[track])
    cfg.save(out / "config.json")
    print(
        f"track {track.name or args.track}: termination={log.termination} steps={len(log)} "
        f"dMA_delta={metrics.dma_delta * 100:.2f} cm  theta_dMAE={metrics.theta_dmae:.5f} rad"
    )
    for f in files:
        print(f"wrote {f}")
    if log.termination == "lane_departure" and not args.allow_failures:
        return 1
    return 0


def cmd_report(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(args, "report")
    logs = [sim.parse_episode_csv(p) for p in args.episodes]
    metrics = [sim.episode_metrics(log, cfg.episode.metric_speed_floor) for log in logs]
    files = sim.emit_report(logs, metrics, out)
    for f in files:
        print(f"wrote {f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtdrive", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_dataset = sub.add_parser("dataset", help="dataset operations")
    dsub = p_dataset.add_subparsers(dest="dataset_command", required=True)
    p_gen = dsub.add_parser("gen", help="render a labeled synthetic dataset")
    _add_common(p_gen)
    p_gen.add_argument("--n", type=int, default=None, help="number of frames (default from config)")
    p_gen.set_defaults(func=cmd_dataset_gen)

    p_train = sub.add_parser("train", help="train a model on a dataset")
    _add_common(p_train)
    p_train.add_argument("--dataset", required=True, help="path to a dataset manifest.json")
    p_train.add_argument("--stage", choices=("pose_only", "joint", "both"), default="both")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval-static", help="static metrics of a trained model")
    _add_common(p_eval)
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--model", required=True, help="checkpoint path")
    p_eval.add_argument("--split", default="test")
    p_eval.set_defaults(func=cmd_eval_static)

    p_sim = sub.add_parser("simulate", help="closed-loop lane keeping episode")
    _add_common(p_sim)
    p_sim.add_argument("--track", default=None, help="preset name, circle:<kappa>, or track file")
    p_sim.add_argument("--perceptor", choices=("ground_truth", "nn"), default=None)
    p_sim.add_argument("--model", default=None, help="checkpoint for the nn perceptor")
    p_sim.add_argument("--dataset", default=None, help="manifest supplying theta normalization for nn")
    p_sim.add_argument("--theta-norm", type=float, default=None)
    p_sim.add_argument("--v-ref", type=float, default=None, help="reference speed override (m/s)")
    p_sim.add_argument("--allow-failures", action="store_true", help="exit 0 even on lane departure")
    p_sim.add_argument("--print-defaults", action="store_true", help="dump the default run config and exit")
    p_sim.set_defaults(func=cmd_simulate)

    p_rep = sub.add_parser("report", help="regenerate metrics and plots from episode CSVs")
    _add_common(p_rep)
    p_rep.add_argument("episodes", nargs="+", help="episode CSV files")
    p_rep.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
