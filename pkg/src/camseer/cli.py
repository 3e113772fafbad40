"""Command-line interface: gen, prepare, train, eval, predict.

Every subcommand is deterministic given its full argument list (seeds
included) and writes files atomically. Exit codes: 0 success, 2
usage/config error, 3 data-format error, 4 numeric failure.

A JSON file passed via ``--config`` provides defaults for the chosen
subcommand; explicit flags win. ``CAMSEER_THREADS`` caps the worker pool
used for member training.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys

import numpy as np

from . import dataset as ds
from . import ensemble as ens
from . import evaluate as ev
from . import neuralnet as nn
from . import synth
from .errors import (
    CamseerError,
    DataFormatError,
    InfeasibleError,
    InvalidParameterError,
    NumericFailureError,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _add_network_flags(parser: argparse.ArgumentParser) -> None:
    d = nn.NetworkConfig()
    parser.add_argument("--hidden", type=int, nargs="+", default=list(d.hidden_sizes),
                        help="LSTM layer sizes (one or two)")
    parser.add_argument("--dropout", type=float, default=d.dropout_p)
    parser.add_argument("--recurrent-dropout", type=float, default=d.recurrent_dropout_p)
    parser.add_argument("--batchnorm", type=int, default=d.num_batchnorm,
                        help="number of batch normalization layers")
    parser.add_argument("--l2", type=float, default=d.l2_lambda)
    parser.add_argument("--lr", type=float, default=d.learning_rate)
    parser.add_argument("--decay", type=float, default=d.lr_decay)
    parser.add_argument("--batch", type=int, default=d.batch_size)
    parser.add_argument("--max-epochs", type=int, default=d.max_epochs)
    parser.add_argument("--patience", type=int, default=d.patience)


def _network_config(args) -> nn.NetworkConfig:
    cfg = nn.NetworkConfig(
        hidden_sizes=tuple(args.hidden),
        dropout_p=args.dropout,
        recurrent_dropout_p=args.recurrent_dropout,
        num_batchnorm=args.batchnorm,
        l2_lambda=args.l2,
        learning_rate=args.lr,
        lr_decay=args.decay,
        batch_size=args.batch,
        max_epochs=args.max_epochs,
        patience=args.patience,
        seed=args.seed,
    )
    cfg.validate()
    return cfg


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="camseer",
        description="Predict endoscopic camera-movement timing from instrument kinematics.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)
    registry = {}

    p = subs.add_parser("gen", help="generate synthetic recordings with ground truth")
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--recordings", type=int, default=1)
    p.add_argument("--duration", type=float, default=600.0)
    p.add_argument("--events", type=int, default=12)
    p.add_argument("--signature", type=float, default=1.0)
    p.add_argument("--signature-window", type=float, default=1.0)
    p.add_argument("--noise-std", type=float, default=synth.SynthConfig().noise_std)
    p.add_argument("--min-event-gap", type=float, default=10.0)
    p.add_argument("--dt", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    registry["gen"] = p

    p = subs.add_parser("prepare", help="detect movements, build features, split dataset")
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--recordings", required=True,
                   help="directory of recording CSVs or a glob pattern")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n", type=int, action="append", default=None,
                   help="segment length in samples; repeatable (default 50)")
    p.add_argument("--horizon", type=float, default=0.0, help="advance horizon, seconds")
    p.add_argument("--guard", type=float, default=2.0, help="label-0 guard zone, seconds")
    p.add_argument("--test-frac", type=float, default=0.15)
    p.add_argument("--val-frac", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--v-on", type=float, default=0.005)
    p.add_argument("--v-off", type=float, default=0.002)
    p.add_argument("--min-duration", type=float, default=0.2)
    p.add_argument("--merge-gap", type=float, default=0.2)
    p.add_argument("--group-guard", action="store_true",
                   help="drop train segments overlapping held-out windows")
    p.add_argument("--archive", action="store_true",
                   help="also cache held-out segment values as binary archives")
    registry["prepare"] = p

    p = subs.add_parser("train", help="train a balanced-subset ensemble")
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--k", type=int, default=ens.DEFAULT_ENSEMBLE_SIZE)
    p.add_argument("--seed", type=int, default=0)
    _add_network_flags(p)
    registry["train"] = p

    p = subs.add_parser("eval", help="evaluate, compare horizons, or emit curves")
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--ensemble", default=None)
    p.add_argument("--split", choices=["test", "validation"], default="test")
    p.add_argument("--relative", nargs="+", default=None,
                   help="report JSONs (horizon 0 plus others) for a relative table")
    p.add_argument("--stability", action="store_true",
                   help="emit accuracy per ensemble-size prefix")
    p.add_argument("--out", default=None, help="output report path")
    registry["eval"] = p

    p = subs.add_parser("predict", help="stream per-window votes over a recording")
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--recording", required=True)
    p.add_argument("--ensemble", required=True)
    p.add_argument("--stride", type=int, default=1)
    registry["predict"] = p

    return parser, registry


def cmd_gen(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    for r in range(args.recordings):
        cfg = synth.SynthConfig(
            duration_s=args.duration,
            dt=args.dt,
            num_events=args.events,
            min_event_gap_s=args.min_event_gap,
            signature_strength=args.signature,
            signature_window_s=args.signature_window,
            noise_std=args.noise_std,
            seed=args.seed + r,
        )
        rid = f"rec_{args.seed + r:04d}"
        rec, intervals = synth.generate_recording(cfg, recording_id=rid)
        csv_path = os.path.join(args.out_dir, f"{rid}.csv")
        ds.save_recording(rec, csv_path)
        synth.write_ground_truth(os.path.join(args.out_dir, f"{rid}.truth.json"), cfg, intervals)
        logger.info("wrote %s (%d events)", csv_path, len(intervals))
    return EXIT_OK


def _recording_paths(spec: str) -> dict[str, str]:
    if os.path.isdir(spec):
        paths = sorted(glob.glob(os.path.join(spec, "*.csv")))
    else:
        paths = sorted(glob.glob(spec))
    if not paths:
        raise DataFormatError(f"no recording CSVs match {spec!r}")
    return {os.path.splitext(os.path.basename(p))[0]: p for p in paths}


def cmd_prepare(args) -> int:
    windows = args.n or [50]
    detection = ds.DetectionConfig(
        v_on=args.v_on, v_off=args.v_off,
        min_duration_s=args.min_duration, merge_gap_s=args.merge_gap,
    )
    paths = _recording_paths(args.recordings)
    recordings = {rid: ds.load_recording(p, recording_id=rid) for rid, p in paths.items()}
    dt = next(iter(recordings.values())).dt
    horizon = int(round(args.horizon / dt))
    guard = int(round(args.guard / dt))
    if guard < horizon:
        raise InvalidParameterError(f"guard {args.guard}s is below horizon {args.horizon}s")
    intervals_by_id = {
        rid: ds.detect_camera_movements(rec.camera_position, rec.dt, detection)
        for rid, rec in recordings.items()
    }
    fms_by_id, stats = ds.build_feature_set(recordings, intervals_by_id)
    os.makedirs(args.out_dir, exist_ok=True)
    for n_window in windows:
        segments = []
        for rid in sorted(fms_by_id):
            segments.extend(ds.extract_segments(
                fms_by_id[rid], intervals_by_id[rid], n_window, horizon, guard
            ))
        splits = ds.split_dataset(segments, args.test_frac, args.val_frac, args.seed)
        group_gap = n_window if args.group_guard else 0
        splits = ds.group_guard_filter(splits, group_gap)
        manifest = ds.build_manifest(
            recording_paths=paths, detection=detection, n_window=n_window,
            horizon=horizon, guard=guard, seed=args.seed,
            test_frac=args.test_frac, val_frac=args.val_frac,
            stats=stats, splits=splits, dt=dt, group_guard_min_gap=group_gap,
        )
        out = os.path.join(args.out_dir, f"manifest_n{n_window}.json")
        ds.write_json_atomic(out, manifest)
        if args.archive:
            for name, segs in (("test", splits.test), ("validation", splits.validation)):
                ds.write_segment_archive(
                    os.path.join(args.out_dir, f"{name}_n{n_window}.cseg"), segs, n_window
                )
        logger.info(
            "wrote %s: %d test, %d validation, %d/%d train pool segments",
            out, len(splits.test), len(splits.validation),
            len(splits.train_pool_pos), len(splits.train_pool_neg),
        )
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = ds.load_manifest(args.manifest)
    config = _network_config(args)
    splits = ds.reconstruct_splits(manifest)
    subsets = ens.make_balanced_subsets(
        splits.train_pool_pos, splits.train_pool_neg, args.k, args.seed
    )
    model, logs = ens.train_ensemble(
        config, subsets, splits.validation, base_seed=args.seed,
        norm_stats=ds.stats_from_manifest(manifest),
        horizon_samples=manifest["horizon_samples"],
        segment_length=manifest["n_window"],
    )
    path = ens.save_ensemble(args.out_dir, model)
    ds.write_json_atomic(os.path.join(args.out_dir, "training_log.json"), {
        "manifest": {"path": str(args.manifest), "sha256": ds.file_digest(args.manifest)},
        "k": args.k,
        "seed": args.seed,
        "members": logs,
    })
    logger.info("wrote ensemble manifest %s", path)
    return EXIT_OK


def _relative_from_files(paths: list[str], out: str | None) -> int:
    by_horizon = {}
    for path in paths:
        with open(path) as fh:
            report = json.load(fh)
        by_horizon[report["horizon_samples"]] = report
    if 0 not in by_horizon:
        raise InvalidParameterError("relative table needs a horizon-0 report")
    base = by_horizon[0]["summary"]
    rows = {}
    for horizon, report in sorted(by_horizon.items()):
        if horizon == 0:
            continue
        rows[str(horizon)] = {
            name: (
                100.0 * report["summary"][name]["mean"] / base[name]["mean"]
                if base[name]["mean"] else None
            )
            for name in ("accuracy", "tpr", "tnr")
        }
    payload = {"relative_to_horizon_0": rows}
    if out:
        ds.write_json_atomic(out, payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.relative:
        return _relative_from_files(args.relative, args.out)
    if not (args.manifest and args.ensemble):
        raise InvalidParameterError("eval needs --manifest and --ensemble (or --relative)")
    manifest = ds.load_manifest(args.manifest)
    model = ens.load_ensemble(args.ensemble)
    splits = ds.reconstruct_splits(manifest, horizon=model.horizon_samples)
    eval_set = splits.test if args.split == "test" else splits.validation
    if args.stability:
        curve = ens.stability_curve(model, eval_set)
        lines = ["k,accuracy"] + [f"{k},{acc:.6f}" for k, acc in enumerate(curve, start=1)]
        text = "\n".join(lines) + "\n"
        if args.out:
            tmp = args.out + ".tmp"
            with open(tmp, "w") as fh:
                fh.write(text)
            os.replace(tmp, args.out)
        print(text, end="")
        return EXIT_OK
    cm, m = ev.evaluate_ensemble(model, eval_set)
    payload = {
        "split": args.split,
        "horizon_samples": model.horizon_samples,
        "confusion": cm.as_dict(),
        "accuracy": m.accuracy,
        "tpr": m.tpr,
        "tnr": m.tnr,
        "notes": m.notes,
        "manifest_sha256": ds.file_digest(args.manifest),
    }
    if args.out:
        ds.write_json_atomic(args.out, payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_predict(args) -> int:
    if args.stride < 1:
        raise InvalidParameterError("stride must be >= 1")
    model = ens.load_ensemble(args.ensemble)
    if model.norm_stats is None:
        raise InvalidParameterError("ensemble carries no normalization statistics")
    rec = ds.load_recording(args.recording)
    intervals = ds.detect_camera_movements(rec.camera_position, rec.dt)
    fms, _ = ds.build_feature_matrices(rec, intervals, stats=model.norm_stats)
    n_window = model.segment_length
    for fm in fms:
        t_len = fm.values.shape[0]
        ends = range(n_window - 1, t_len, args.stride)
        windows = np.stack([fm.values[e - n_window + 1:e + 1] for e in ends]) \
            if t_len >= n_window else None
        if windows is None:
            continue
        records = ens.ensemble_predict_batch(model, windows)
        for e, record in zip(ends, records):
            end_time = fm.global_offsets[e] * rec.dt
            print(f"{end_time:.3f}\t{record.positive_votes}\t{record.final_class}")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, registry = build_parser()
    try:
        pre, _ = parser.parse_known_args(argv)
    except SystemExit:
        return EXIT_USAGE
    config_path = getattr(pre, "config", None)
    if config_path:
        try:
            with open(config_path) as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"camseer: cannot read config {config_path}: {exc}", file=sys.stderr)
            return EXIT_USAGE
        if not isinstance(overrides, dict):
            print("camseer: --config must contain a JSON object", file=sys.stderr)
            return EXIT_USAGE
        registry[pre.command].set_defaults(**overrides)
    try:
        args = parser.parse_args(argv)
    except SystemExit:
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (InvalidParameterError, InfeasibleError) as exc:
        print(f"camseer: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"camseer: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericFailureError as exc:
        print(f"camseer: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CamseerError as exc:
        print(f"camseer: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
