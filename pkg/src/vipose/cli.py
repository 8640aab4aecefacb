"""Command line: synth, train, track, eval, bench.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def log(msg: str):
    print(msg, file=sys.stderr, flush=True)


def _config(args):
    from .config import RunConfig, default_config
    if getattr(args, "config", None):
        return RunConfig.load(args.config)
    seed = getattr(args, "seed", None)
    return default_config(0 if seed is None else seed)


def _dataset(path):
    from .datagen import DatasetError, read_dataset
    if not Path(path, "meta.json").is_file():
        raise UsageError(f"{path}: not a dataset directory (no meta.json)")
    try:
        return read_dataset(path)
    except DatasetError as e:
        raise UsageError(str(e)) from None


def _checkpoint(path):
    from .autodiff import CheckpointError
    from .network import ConfigMismatch, VIPoseNet
    if not Path(path).exists():
        raise UsageError(f"{path}: checkpoint not found")
    try:
        return VIPoseNet.load(path)
    except (CheckpointError, ConfigMismatch) as e:
        raise UsageError(str(e)) from None


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    from .datagen import dataset_checksum, synthesize_dataset
    cfg = _config(args)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise UsageError(f"{out}: output directory is not empty")
    t0 = time.monotonic()
    meta = synthesize_dataset(cfg.dataset, out, log=log)
    frames = sum(s["frames"] for s in meta["sequences"])
    digest = dataset_checksum(out)
    log(f"synth: {len(meta['sequences'])} sequences, {frames} frames, sha256 {digest} "
        f"({time.monotonic() - t0:.1f} s)")
    return EXIT_OK


def cmd_train(args) -> int:
    from .network import VIPoseNet
    from .training import pool_for, train_step1, train_step2
    cfg = _config(args)
    ds = _dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    step1_dir, step2_dir = out / "step1", out / "step2"
    t0 = time.monotonic()

    def progress(step, epoch, b, n, value):
        if args.verbose or b == n - 1:
            log(f"step {step} epoch {epoch} batch {b + 1}/{n} loss {value:.5f} ({time.monotonic() - t0:.0f} s)")

    pool = pool_for(ds, cfg.training, cfg.network)
    if args.step in ("1", "both"):
        net = VIPoseNet(cfg.network, seed=cfg.seed)
        res = train_step1(net, pool, cfg.training, out / "train_log.csv", out, progress)
        net.save(step1_dir)
        log(f"step 1 done: final epoch loss {res.epoch_losses[-1]:.5f}; checkpoint {step1_dir}")
    if args.step in ("2", "both"):
        src = Path(args.resume) if args.resume else step1_dir
        net = _checkpoint(src)
        if net.cfg != cfg.network:
            raise UsageError(f"{src}: network config differs from the run config")
        res = train_step2(net, pool, cfg.training, out / "train_log.csv", out, progress)
        net.save(step2_dir)
        log(f"step 2 done: final epoch loss {res.epoch_losses[-1]:.5f}; checkpoint {step2_dir}")
    log(f"train: {time.monotonic() - t0:.1f} s")
    return EXIT_OK


def _predictor(args, gt_for=None):
    from .tracker import NetworkPredictor, ZeroPredictor
    if args.baseline == "zero":
        return ZeroPredictor(), None
    if not args.checkpoint:
        raise UsageError("--checkpoint is required unless --baseline is given")
    net = _checkpoint(args.checkpoint)
    return NetworkPredictor(net, no_imu=args.no_imu), net


def _policy(args, cfg):
    from .tracker import ReinitPolicy
    p = cfg.policy
    try:
        return ReinitPolicy(args.policy_window or p.window_len,
                            args.policy_rot if args.policy_rot is not None else p.rot_threshold_deg,
                            args.policy_trans if args.policy_trans is not None else p.trans_threshold)
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_track(args) -> int:
    from .tracker import TrackConfig, track_dataset_sequence
    cfg = _config(args)
    ds = _dataset(args.data)
    predictor, net = _predictor(args)
    policy = _policy(args, cfg)
    track_cfg = TrackConfig(net.cfg.input_h, net.cfg.input_w, cfg.track.expand) if net else cfg.track
    imu_len = net.cfg.imu_len if net else cfg.network.imu_len
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seqs = ds.split(args.split) if args.split != "all" else ds.sequences
    if args.sequence:
        seqs = [ds.sequence(args.sequence)]
    for seq in seqs:
        t0 = time.monotonic()
        res = track_dataset_sequence(seq, predictor, ds.model, ds.intrinsics, policy, track_cfg, imu_len,
                                     max_frames=args.frames)
        res.write_trajectory(out / f"{seq.name}_trajectory.csv")
        res.write_latency(out / f"{seq.name}_latency.csv")
        log(f"track {seq.name}: {len(res.poses)} frames, {res.reinit_count} re-inits "
            f"({time.monotonic() - t0:.1f} s)")
    (out / "track.json").write_text(json.dumps({
        "checkpoint": str(args.checkpoint) if net else None, "baseline": args.baseline,
        "no_imu": bool(args.no_imu), "policy": vars(policy) if hasattr(policy, "__dict__") else str(policy),
        "sequences": [s.name for s in seqs]}, indent=1, default=str))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import evaluate_run, model_points, report, summarize, write_records
    from .tracker import read_latency, read_trajectory
    from .training import read_train_log
    cfg = _config(args)
    ds = _dataset(args.data)
    pts = model_points(ds.model.vertices, cfg.max_points, seed=0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summaries, distances = [], {}
    for tracks in args.tracks:
        tdir = Path(tracks)
        files = sorted(tdir.glob("*_trajectory.csv"))
        if not files:
            raise UsageError(f"{tdir}: no *_trajectory.csv files")
        label = tdir.name
        all_records = []
        for f in files:
            name = f.name[: -len("_trajectory.csv")]
            seq = ds.sequence(name)
            poses, _, flags = read_trajectory(f)
            gt = [seq.pose(k) for k in range(len(poses))]
            lat_path = tdir / f"{name}_latency.csv"
            lat = {r["frame"]: r["total"] for r in read_latency(lat_path)} if lat_path.exists() else {}
            records, s = evaluate_run(poses, gt, pts, lat, flags, ds.model.name, cfg.max_threshold)
            write_records(out / f"{label}_{name}_records.csv", records)
            all_records += records
            log(f"eval {label}/{name}: auc_add {s['auc_add']:.4f} auc_adds {s['auc_adds']:.4f} "
                f"re-inits {s['reinit_count']}")
        obj = ds.model.name if len(args.tracks) == 1 else f"{ds.model.name}@{label}"
        summaries.append(summarize(all_records, obj, cfg.max_threshold))
        distances[label] = {"add": [r.add for r in all_records], "add_s": [r.add_s for r in all_records]}
    logs = {}
    for p in args.train_log or []:
        logs[Path(p).parent.name or "train"] = read_train_log(p)
    report(summaries, out, distances, logs, cfg.max_threshold)
    (out / "summary.json").write_text(json.dumps(summaries, indent=1))
    return EXIT_OK


def cmd_bench(args) -> int:
    from .tracker import STAGES, TrackConfig, track_dataset_sequence
    cfg = _config(args)
    ds = _dataset(args.data)
    predictor, net = _predictor(args)
    track_cfg = TrackConfig(net.cfg.input_h, net.cfg.input_w, cfg.track.expand) if net else cfg.track
    seq = ds.sequence(args.sequence) if args.sequence else (ds.split("test") or ds.sequences)[0]
    frames = max(2, min(args.frames, len(seq)))
    # warm-up step so allocation costs do not land in the first timed frame
    track_dataset_sequence(seq, predictor, ds.model, ds.intrinsics, cfg.policy, track_cfg,
                           net.cfg.imu_len if net else cfg.network.imu_len, max_frames=2)
    res = track_dataset_sequence(seq, predictor, ds.model, ds.intrinsics, cfg.policy, track_cfg,
                                 net.cfg.imu_len if net else cfg.network.imu_len, max_frames=frames)
    report = bench_report(res.latency)
    report.update(sequence=seq.name, frames=len(res.latency))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(report, indent=1))
    for s in STAGES:
        log(f"{s:>10}: {report['stage_ms'][s]:8.3f} ms")
    log(f"{'total':>10}: {report['total_ms']:8.3f} ms  ({report['fps']:.1f} fps, "
        f"non-inference share {report['non_inference_fraction']:.1%})")
    return EXIT_OK


def bench_report(latency) -> dict:
    from .tracker import STAGES
    stage = {s: 1e3 * float(np.mean([r[s] for r in latency])) for s in STAGES}
    total = sum(stage.values())
    return {"stage_ms": stage, "total_ms": total, "fps": 1e3 / total if total > 0 else 0.0,
            "non_inference_fraction": (total - stage["inference"]) / total if total > 0 else 0.0}


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vipose", description="Visual-inertial object pose tracking toolkit")
    p.add_argument("--threads", type=int, default=None, help="cap numeric worker threads (env VIPOSE_THREADS)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="run config JSON")
        if data:
            sp.add_argument("--data", required=True, help="dataset directory")

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    common(s, data=False)
    s.add_argument("--seed", type=int, help="seed when no config is given")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="two-step training")
    common(t)
    t.add_argument("--out", required=True)
    t.add_argument("--step", choices=["1", "2", "both"], default="both")
    t.add_argument("--resume", help="step-1 checkpoint for --step 2 (default OUT/step1)")
    t.add_argument("--verbose", action="store_true", help="log every batch")
    t.set_defaults(func=cmd_train)

    def predictor_args(sp):
        sp.add_argument("--checkpoint")
        sp.add_argument("--baseline", choices=["zero"], help="run a stub predictor instead of a network")
        sp.add_argument("--no-imu", action="store_true", help="zero the inertial input (ablation)")
        sp.add_argument("--sequence", help="single sequence name")

    k = sub.add_parser("track", help="track dataset sequences")
    common(k)
    predictor_args(k)
    k.add_argument("--out", required=True)
    k.add_argument("--split", choices=["train", "test", "all"], default="test")
    k.add_argument("--frames", type=int, default=None, help="track only the first N frames")
    k.add_argument("--policy-window", type=int, default=None)
    k.add_argument("--policy-rot", type=float, default=None, help="degrees")
    k.add_argument("--policy-trans", type=float, default=None, help="meters")
    k.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="metrics and report for tracked trajectories")
    common(e)
    e.add_argument("--tracks", nargs="+", required=True, help="one or more track output directories")
    e.add_argument("--train-log", nargs="*", help="training log CSVs to plot")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="per-stage latency and fps")
    common(b)
    predictor_args(b)
    b.add_argument("--frames", type=int, default=100)
    b.add_argument("--out", help="write the JSON report here")
    b.set_defaults(func=cmd_bench)
    return p


def _threads(args) -> int | None:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("VIPOSE_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"VIPOSE_THREADS={env!r} is not an integer") from None
    return None


def main(argv=None) -> int:
    from .config import ConfigError
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        n = _threads(args)
        if n is not None:
            if n < 1:
                raise UsageError("--threads must be >= 1")
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=n):
                return args.func(args)
        return args.func(args)
    except (UsageError, ConfigError) as e:
        log(f"error: {e}")
        return EXIT_USAGE
    except KeyboardInterrupt:
        log("interrupted")
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001 - report any runtime failure with the stable exit code
        log(f"error: {type(e).__name__}: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
