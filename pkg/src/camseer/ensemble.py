"""Balanced-subset ensembles with majority voting.

Each member network trains on all minority-class (before-movement)
segments plus an equally sized random draw of majority-class segments;
draws are independent across members. Prediction combines member classes
by majority vote (default) or by mean probability.
"""

from __future__ import annotations

import concurrent.futures
import os
from dataclasses import dataclass, replace

import numpy as np

from . import dataset as ds
from . import neuralnet as nn
from .errors import ContractViolationError, InfeasibleError, InvalidParameterError
from .signal import NormStats

DEFAULT_ENSEMBLE_SIZE = 15

VOTE_RULES = ("majority", "mean-probability")


@dataclass
class EnsembleModel:
    networks: list[nn.NetworkParams]
    vote_rule: str
    norm_stats: list[NormStats] | None
    segment_length: int
    horizon_samples: int
    seeds: list[int]

    @property
    def size(self) -> int:
        return len(self.networks)


@dataclass
class VoteRecord:
    classes: list[int]
    probabilities: list[float]
    final_class: int
    positive_votes: int


def worker_count(upper: int) -> int:
    """Worker cap: CAMSEER_THREADS if set, else the CPU count."""
    env = os.environ.get("CAMSEER_THREADS")
    limit = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(limit, upper))


def make_balanced_subsets(
    pool_pos: list, pool_neg: list, k: int, seed: int
) -> list[list]:
    """K balanced training sets: all positives plus sampled negatives.

    Negatives are drawn uniformly without replacement within each subset
    and independently across subsets. Deterministic given the seed.
    """
    if k < 1:
        raise InvalidParameterError("ensemble size must be >= 1")
    if len(pool_neg) < len(pool_pos):
        raise InfeasibleError(
            f"{len(pool_neg)} negatives cannot balance {len(pool_pos)} positives"
        )
    rng = np.random.default_rng(seed)
    subsets = []
    for _ in range(k):
        idx = rng.choice(len(pool_neg), size=len(pool_pos), replace=False)
        subsets.append(list(pool_pos) + [pool_neg[i] for i in idx])
    return subsets


def _train_member(args):
    config, train_arrays, val_arrays = args
    return nn.train_network(config, train_arrays, val_arrays)


def train_ensemble(
    config: nn.NetworkConfig,
    subsets: list[list],
    val_set,
    base_seed: int,
    norm_stats: list[NormStats] | None = None,
    horizon_samples: int = 0,
    segment_length: int | None = None,
) -> tuple[EnsembleModel, list[dict]]:
    """Train one network per subset with seeds base_seed + k.

    Members share the validation set for early stopping. Training is
    parallel across members (bounded by CAMSEER_THREADS); member seeds
    make the result independent of scheduling.
    """
    if not subsets:
        raise InvalidParameterError("need at least one training subset")
    val_arrays = nn._as_arrays(val_set)
    jobs = []
    seeds = []
    for k, subset in enumerate(subsets):
        seed = base_seed + k
        seeds.append(seed)
        jobs.append((replace(config, seed=seed), nn._as_arrays(subset), val_arrays))
    workers = worker_count(len(jobs))
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_member, jobs))
    else:
        results = [_train_member(job) for job in jobs]
    networks = [params for params, _ in results]
    logs = [log for _, log in results]
    seg_len = segment_length or jobs[0][1][0].shape[1]
    model = EnsembleModel(
        networks=networks, vote_rule="majority", norm_stats=norm_stats,
        segment_length=seg_len, horizon_samples=horizon_samples, seeds=seeds,
    )
    return model, logs


def _final_class(votes: int, k: int, vote_rule: str, mean_prob: float) -> int:
    if vote_rule == "majority":
        # Majority of K; an even split counts as class 1.
        return int(2 * votes >= k)
    if vote_rule == "mean-probability":
        return int(mean_prob >= 0.5)
    raise InvalidParameterError(f"unknown vote rule {vote_rule!r}")


def ensemble_predict_batch(model: EnsembleModel, batch: np.ndarray) -> list[VoteRecord]:
    """Vote records for a (B, N, 21) batch; one forward pass per member."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3 or batch.shape[1] != model.segment_length:
        raise ContractViolationError(
            f"batch must have shape (B, {model.segment_length}, 21)"
        )
    probs = np.stack([
        nn.forward(net, batch, "infer")[0] for net in model.networks
    ])  # (K, B)
    classes = (probs >= 0.5).astype(int)
    votes = classes.sum(axis=0)
    mean_probs = probs.mean(axis=0)
    k = model.size
    return [
        VoteRecord(
            classes=list(classes[:, j]),
            probabilities=list(probs[:, j]),
            positive_votes=int(votes[j]),
            final_class=_final_class(int(votes[j]), k, model.vote_rule, float(mean_probs[j])),
        )
        for j in range(batch.shape[0])
    ]


def ensemble_predict(model: EnsembleModel, segment: np.ndarray) -> VoteRecord:
    """Vote record for a single (N, 21) segment."""
    segment = np.asarray(segment, dtype=np.float64)
    if segment.shape != (model.segment_length, ds.NUM_FEATURES):
        raise ContractViolationError(
            f"segment must have shape ({model.segment_length}, {ds.NUM_FEATURES})"
        )
    return ensemble_predict_batch(model, segment[None])[0]


def stability_curve(model: EnsembleModel, eval_set) -> list[float]:
    """Majority-vote accuracy of each ensemble-size prefix k = 1..K."""
    x, y = nn._as_arrays(eval_set)
    probs = np.stack([nn.forward(net, x, "infer")[0] for net in model.networks])
    classes = (probs >= 0.5).astype(int)
    cumulative = np.cumsum(classes, axis=0)  # (K, B)
    accuracies = []
    for k in range(1, model.size + 1):
        final = (2 * cumulative[k - 1] >= k).astype(int)
        accuracies.append(float(np.mean(final == y.astype(int))))
    return accuracies


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_ensemble(out_dir, model: EnsembleModel) -> str:
    """Write member model files plus a JSON manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    member_files = []
    for k, net in enumerate(model.networks):
        name = f"member_{k:03d}.cnet"
        nn.save_network(os.path.join(out_dir, name), net, norm_stats=model.norm_stats)
        member_files.append(name)
    manifest = {
        "k": model.size,
        "vote_rule": model.vote_rule,
        "segment_length": model.segment_length,
        "horizon_samples": model.horizon_samples,
        "seeds": model.seeds,
        "members": [
            {"file": name, "sha256": ds.file_digest(os.path.join(out_dir, name))}
            for name in member_files
        ],
        "norm_stats": None if model.norm_stats is None else [
            {"mean": s.mean, "std": s.std, "degenerate": s.degenerate}
            for s in model.norm_stats
        ],
    }
    path = os.path.join(out_dir, "ensemble.json")
    ds.write_json_atomic(path, manifest)
    return path


def load_ensemble(manifest_path) -> EnsembleModel:
    import json

    manifest_path = os.fspath(manifest_path)
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, "ensemble.json")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    base = os.path.dirname(manifest_path)
    networks = []
    norm_stats = None
    for member in manifest["members"]:
        net, stats = nn.load_network(os.path.join(base, member["file"]))
        networks.append(net)
        norm_stats = norm_stats or stats
    return EnsembleModel(
        networks=networks,
        vote_rule=manifest["vote_rule"],
        norm_stats=norm_stats,
        segment_length=manifest["segment_length"],
        horizon_samples=manifest["horizon_samples"],
        seeds=manifest["seeds"],
    )
