"""Confusion-matrix metrics and experiment drivers.

Includes the multi-seed experiment runner, advance-prediction
relative-performance tables, and the segment-duration and hyperparameter
sweeps. All randomized stages take explicit seeds that are recorded in
the emitted reports.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import dataset as ds
from . import ensemble as ens
from . import neuralnet as nn
from .errors import InvalidParameterError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    tn: int
    fp: int
    fn: int
    tp: int

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    def as_dict(self) -> dict:
        return {"tn": self.tn, "fp": self.fp, "fn": self.fn, "tp": self.tp}


@dataclass(frozen=True)
class Metrics:
    """Accuracy/TPR/TNR; an undefined rate is None with the reason recorded."""

    accuracy: float
    tpr: float | None
    tnr: float | None
    notes: dict = field(default_factory=dict)


@dataclass
class MetricsReport:
    horizon_samples: int
    seeds: list[int]
    matrices: list[ConfusionMatrix]
    metrics: list[Metrics]

    def mean_std(self, name: str) -> tuple[float, float]:
        values = [getattr(m, name) for m in self.metrics if getattr(m, name) is not None]
        if not values:
            return math.nan, math.nan
        return float(np.mean(values)), float(np.std(values))

    def as_dict(self) -> dict:
        summary = {}
        for name in ("accuracy", "tpr", "tnr"):
            mean, std = self.mean_std(name)
            summary[name] = {"mean": mean, "std": std}
        return {
            "horizon_samples": self.horizon_samples,
            "seeds": self.seeds,
            "runs": [
                {
                    "seed": seed,
                    "confusion": cm.as_dict(),
                    "accuracy": m.accuracy,
                    "tpr": m.tpr,
                    "tnr": m.tnr,
                }
                for seed, cm, m in zip(self.seeds, self.matrices, self.metrics)
            ],
            "summary": summary,
        }


def confusion(preds, truths) -> ConfusionMatrix:
    """2x2 counts; positive class is 'before camera movement'."""
    p = np.asarray(preds, dtype=int)
    t = np.asarray(truths, dtype=int)
    if p.shape != t.shape or p.size < 1:
        raise InvalidParameterError("predictions/truths must be equal-length, non-empty")
    return ConfusionMatrix(
        tn=int(np.sum((p == 0) & (t == 0))),
        fp=int(np.sum((p == 1) & (t == 0))),
        fn=int(np.sum((p == 0) & (t == 1))),
        tp=int(np.sum((p == 1) & (t == 1))),
    )


def metrics(cm: ConfusionMatrix) -> Metrics:
    """Accuracy = (TN+TP)/total, TPR = TP/(TP+FN), TNR = TN/(TN+FP)."""
    if cm.total < 1:
        raise InvalidParameterError("empty confusion matrix")
    notes = {}
    accuracy = (cm.tn + cm.tp) / cm.total
    if cm.tp + cm.fn > 0:
        tpr = cm.tp / (cm.tp + cm.fn)
    else:
        tpr = None
        notes["tpr"] = "undefined: no positive ground-truth samples"
    if cm.tn + cm.fp > 0:
        tnr = cm.tn / (cm.tn + cm.fp)
    else:
        tnr = None
        notes["tnr"] = "undefined: no negative ground-truth samples"
    return Metrics(accuracy=accuracy, tpr=tpr, tnr=tnr, notes=notes)


def evaluate_ensemble(model: ens.EnsembleModel, eval_set) -> tuple[ConfusionMatrix, Metrics]:
    x, y = nn._as_arrays(eval_set)
    records = ens.ensemble_predict_batch(model, x)
    cm = confusion([r.final_class for r in records], y.astype(int))
    return cm, metrics(cm)


# ---------------------------------------------------------------------------
# Experiment drivers
# ---------------------------------------------------------------------------

def run_experiment(
    manifest: dict,
    config: nn.NetworkConfig,
    k: int,
    horizons: list[int],
    num_seeds: int,
    base_seed: int | None = None,
    recordings: dict | None = None,
    out_dir: str | None = None,
) -> dict[int, MetricsReport]:
    """Train and evaluate ensembles per horizon over multiple seeds.

    ``horizons`` are in samples. The manifest's held-out membership is
    reused at every horizon (positives re-targeted to the horizon's
    window) so metrics compare like against like. Every run records its
    seed; artifacts are written under ``out_dir`` when given.
    """
    base_seed = manifest["seed"] if base_seed is None else base_seed
    if recordings is None:
        recordings = {
            rid: ds.load_recording(info["path"], recording_id=rid)
            for rid, info in manifest["recordings"].items()
        }
    stats = ds.stats_from_manifest(manifest)
    reports: dict[int, MetricsReport] = {}
    for horizon in horizons:
        splits = ds.reconstruct_splits(manifest, recordings=recordings, horizon=horizon)
        seeds, matrices, run_metrics = [], [], []
        for run in range(num_seeds):
            seed = base_seed + 1000 * run
            subsets = ens.make_balanced_subsets(
                splits.train_pool_pos, splits.train_pool_neg, k, seed
            )
            model, _logs = ens.train_ensemble(
                config, subsets, splits.validation, base_seed=seed,
                norm_stats=stats, horizon_samples=horizon,
                segment_length=manifest["n_window"],
            )
            cm, m = evaluate_ensemble(model, splits.test)
            seeds.append(seed)
            matrices.append(cm)
            run_metrics.append(m)
            if out_dir:
                ens.save_ensemble(
                    os.path.join(out_dir, f"h{horizon:03d}_seed{seed}"), model
                )
        reports[horizon] = MetricsReport(
            horizon_samples=horizon, seeds=seeds, matrices=matrices, metrics=run_metrics
        )
        if out_dir:
            ds.write_json_atomic(
                os.path.join(out_dir, f"report_h{horizon:03d}.json"),
                reports[horizon].as_dict(),
            )
    return reports


@dataclass
class RelativeReport:
    """Per-horizon metric percentages relative to the imminent (horizon 0) run."""

    rows: dict[int, dict[str, float | None]]

    def as_dict(self) -> dict:
        return {str(h): row for h, row in sorted(self.rows.items())}


def relative_performance(reports: dict[int, MetricsReport]) -> RelativeReport:
    """Percentage of each metric versus the horizon-0 report."""
    if 0 not in reports:
        raise InvalidParameterError("relative performance needs a horizon-0 report")
    baseline = {name: reports[0].mean_std(name)[0] for name in ("accuracy", "tpr", "tnr")}
    rows = {}
    for horizon, report in reports.items():
        if horizon == 0:
            continue
        row = {}
        for name in ("accuracy", "tpr", "tnr"):
            base = baseline[name]
            mean = report.mean_std(name)[0]
            if not base or math.isnan(base) or math.isnan(mean):
                row[name] = None
            else:
                row[name] = 100.0 * mean / base
        rows[horizon] = row
    return RelativeReport(rows=rows)


def sweep_segment_duration(
    recordings: dict[str, "ds.KinematicRecording"],
    durations: list[int],
    config: nn.NetworkConfig,
    k: int,
    num_seeds: int,
    horizon: int = 0,
    guard: int = 100,
    split_seed: int = 0,
    base_seed: int = 0,
    test_frac: float = 0.15,
    val_frac: float = 0.15,
    detection: ds.DetectionConfig | None = None,
) -> dict[int, MetricsReport]:
    """Re-segment, re-split (same seed), train and evaluate per window length."""
    detection = detection or ds.DetectionConfig()
    intervals_by_id = {
        rid: ds.detect_camera_movements(rec.camera_position, rec.dt, detection)
        for rid, rec in recordings.items()
    }
    fms_by_id, stats = ds.build_feature_set(recordings, intervals_by_id)
    table: dict[int, MetricsReport] = {}
    for n_window in durations:
        segments = []
        for rid in sorted(fms_by_id):
            segments.extend(ds.extract_segments(
                fms_by_id[rid], intervals_by_id[rid], n_window, horizon, guard
            ))
        splits = ds.split_dataset(segments, test_frac, val_frac, split_seed)
        seeds, matrices, run_metrics = [], [], []
        for run in range(num_seeds):
            seed = base_seed + 1000 * run
            subsets = ens.make_balanced_subsets(
                splits.train_pool_pos, splits.train_pool_neg, k, seed
            )
            model, _ = ens.train_ensemble(
                config, subsets, splits.validation, base_seed=seed,
                norm_stats=stats, horizon_samples=horizon, segment_length=n_window,
            )
            cm, m = evaluate_ensemble(model, splits.test)
            seeds.append(seed)
            matrices.append(cm)
            run_metrics.append(m)
        table[n_window] = MetricsReport(
            horizon_samples=horizon, seeds=seeds, matrices=matrices, metrics=run_metrics
        )
    return table


def write_duration_table(path, table: dict[int, MetricsReport], dt: float) -> None:
    """Plot-ready CSV: one row per segment duration."""
    lines = ["duration_s,n_window,accuracy_mean,accuracy_std,tpr_mean,tpr_std,tnr_mean,tnr_std"]
    for n_window in sorted(table):
        report = table[n_window]
        cells = [f"{n_window * dt:g}", str(n_window)]
        for name in ("accuracy", "tpr", "tnr"):
            mean, std = report.mean_std(name)
            cells += [f"{mean:.6f}", f"{std:.6f}"]
        lines.append(",".join(cells))
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


# Admissible hyperparameter values for the tuning sweep.
SWEEP_SPACE = {
    "num_layers": [1, 2],
    "neurons": [100, 300, 500, 700, 900, 1100],
    "dropout_p": [0.1, 0.2, 0.3],
    "recurrent_dropout_p": [0.0, 0.2],
    "num_batchnorm": [0, 1, 2],
    "learning_rate": [0.001, 0.0001],
    "lr_decay": [0.90, 0.99, 1.0],
    "batch_size": [32, 64, 128, 256],
    "l2_lambda": [0.1, 0.01, 0.001, 0.0001],
}


def sweep_hyperparameters(
    grid: dict[str, list],
    train_set,
    val_set,
    max_configs: int | None = None,
    seed: int = 0,
    base_config: nn.NetworkConfig | None = None,
) -> list[dict]:
    """Rank grid candidates by validation accuracy; never touches a test split.

    ``grid`` values must be subsets of the admissible tuning space. The
    ``neurons`` axis applies per layer (same size for every layer). Returns
    the ranked list of {config, val_accuracy, val_tpr, val_tnr}.
    """
    if not grid:
        raise InvalidParameterError("empty hyperparameter grid")
    for key, values in grid.items():
        if key not in SWEEP_SPACE:
            raise InvalidParameterError(f"unknown grid axis {key!r}")
        bad = [v for v in values if v not in SWEEP_SPACE[key]]
        if bad:
            raise InvalidParameterError(f"inadmissible values for {key}: {bad}")
    base = base_config or nn.NetworkConfig()
    axes = sorted(grid)
    combos = list(itertools.product(*(grid[a] for a in axes)))
    if max_configs is not None:
        combos = combos[:max_configs]
    results = []
    for combo in combos:
        choice = dict(zip(axes, combo))
        num_layers = choice.pop("num_layers", base.num_layers)
        neurons = choice.pop("neurons", None)
        hidden = (neurons,) * num_layers if neurons else base.hidden_sizes[:num_layers]
        num_bn = min(choice.get("num_batchnorm", base.num_batchnorm), num_layers)
        choice["num_batchnorm"] = num_bn
        config = replace(base, hidden_sizes=hidden, seed=seed, **choice)
        params, log = nn.train_network(config, train_set, val_set)
        x_val, y_val = nn._as_arrays(val_set)
        probs, _ = nn.forward(params, x_val, "infer")
        cm = confusion((probs >= 0.5).astype(int), y_val.astype(int))
        m = metrics(cm)
        results.append({
            "config": config,
            "val_accuracy": m.accuracy,
            "val_tpr": m.tpr,
            "val_tnr": m.tnr,
            "best_epoch": log["best_epoch"],
        })
    results.sort(key=lambda r: r["val_accuracy"], reverse=True)
    return results
