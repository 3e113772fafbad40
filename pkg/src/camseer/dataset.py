"""Recording ingestion, camera-movement detection, feature construction,
window labeling and split generation.

Feature column order, fixed for the whole package: for each instrument i
in 1..3: p_ix, p_iy, p_iz, v_ix, v_iy, v_iz, g_i (21 columns total).
Positions are low-pass filtered at 5 Hz, differentiated, the velocity is
filtered at 8 Hz, and every column is z-scored; gripper angles are
z-scored only. Filtering and differentiation are applied per stationary
chunk, never across camera movements, because instrument positions are
camera-relative and jump at every movement.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np

from . import signal as sig
from .errors import (
    DataFormatError,
    InfeasibleError,
    InvalidParameterError,
)

logger = logging.getLogger(__name__)

POSITION_CUTOFF_HZ = 5.0
VELOCITY_CUTOFF_HZ = 8.0
NUM_FEATURES = 21
NUM_INSTRUMENTS = 3

CSV_COLUMNS = [
    "t", "cam_x", "cam_y", "cam_z",
    "p1x", "p1y", "p1z", "g1",
    "p2x", "p2y", "p2z", "g2",
    "p3x", "p3y", "p3z", "g3",
]

FEATURE_COLUMNS = [
    f"{kind}{i}{axis}" if kind != "g" else f"g{i}"
    for i in (1, 2, 3)
    for kind, axis in (
        ("p", "x"), ("p", "y"), ("p", "z"),
        ("v", "x"), ("v", "y"), ("v", "z"),
        ("g", ""),
    )
]


@dataclass(frozen=True)
class MovementInterval:
    """Half-open sample range [start, end) during which the camera moved."""

    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise InvalidParameterError(f"bad interval [{self.start}, {self.end})")


@dataclass
class KinematicRecording:
    id: str
    dt: float
    camera_position: np.ndarray  # (T, 3)
    instrument_position: np.ndarray  # (3, T, 3)
    gripper_angle: np.ndarray  # (3, T)

    @property
    def n_samples(self) -> int:
        return self.camera_position.shape[0]


@dataclass(frozen=True)
class DetectionConfig:
    """Hysteresis thresholds for camera-movement detection."""

    v_on: float = 0.005  # m/s, a sample this fast seeds an interval
    v_off: float = 0.002  # m/s, intervals extend while above this
    min_duration_s: float = 0.2
    merge_gap_s: float = 0.2
    smooth_cutoff_hz: float = POSITION_CUTOFF_HZ

    def __post_init__(self):
        if not 0 < self.v_off < self.v_on:
            raise InvalidParameterError("need 0 < v_off < v_on")


@dataclass
class FeatureMatrix:
    """Normalized 21-feature stream of one stationary-camera chunk."""

    recording_id: str
    chunk_idx: int
    values: np.ndarray  # (T, 21)
    global_offsets: np.ndarray  # (T,) recording sample indices


@dataclass(slots=True)
class LabeledSegment:
    values: np.ndarray  # (N, 21) view into the chunk matrix
    label: int  # 1 = before camera movement
    recording_id: str
    chunk_idx: int
    end_offset: int  # recording sample index of the last row
    horizon_samples: int

    def key(self) -> tuple[str, int, int]:
        return (self.recording_id, self.chunk_idx, self.end_offset)


@dataclass
class DatasetSplits:
    test: list[LabeledSegment]
    validation: list[LabeledSegment]
    train_pool_pos: list[LabeledSegment]
    train_pool_neg: list[LabeledSegment]
    seed: int
    provenance: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Recording I/O
# ---------------------------------------------------------------------------

def load_recording(path, recording_id: str | None = None) -> KinematicRecording:
    """Load a recording CSV and validate timing and finiteness."""
    path = os.fspath(path)
    with open(path, "r") as fh:
        header = fh.readline().strip()
    names = [c.strip() for c in header.split(",")]
    if names != CSV_COLUMNS:
        missing = [c for c in CSV_COLUMNS if c not in names]
        raise DataFormatError(f"{path}: bad header, missing columns {missing or names}")
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise DataFormatError(f"{path}: unparseable numeric data: {exc}") from exc
    if data.shape[1] != len(CSV_COLUMNS):
        raise DataFormatError(f"{path}: expected {len(CSV_COLUMNS)} columns")
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        row, col = bad[0]
        raise DataFormatError(
            f"{path}: non-finite value in column {CSV_COLUMNS[col]} at data row {row + 1}"
        )
    t = data[:, 0]
    if t.size < 2:
        raise DataFormatError(f"{path}: need at least 2 samples")
    dts = np.diff(t)
    non_mono = np.argwhere(dts <= 0)
    if non_mono.size:
        row = int(non_mono[0][0])
        raise DataFormatError(f"{path}: non-monotonic time at data row {row + 2}")
    dt = float(np.median(dts))
    worst = int(np.argmax(np.abs(dts - dt)))
    if abs(dts[worst] - dt) > 0.1 * dt:
        raise DataFormatError(
            f"{path}: non-uniform sampling at data row {worst + 2} "
            f"(dt {dts[worst]:.6g} vs {dt:.6g})"
        )
    camera = data[:, 1:4]
    instrument = np.stack([data[:, 4 + 4 * i: 7 + 4 * i] for i in range(NUM_INSTRUMENTS)])
    gripper = np.stack([data[:, 7 + 4 * i] for i in range(NUM_INSTRUMENTS)])
    rid = recording_id or os.path.splitext(os.path.basename(path))[0]
    return KinematicRecording(
        id=rid, dt=dt, camera_position=camera,
        instrument_position=instrument, gripper_angle=gripper,
    )


def save_recording(rec: KinematicRecording, path) -> None:
    """Write a recording in the CSV interchange format (atomic)."""
    n = rec.n_samples
    cols = [np.arange(n) * rec.dt, *rec.camera_position.T]
    for i in range(NUM_INSTRUMENTS):
        cols.extend(rec.instrument_position[i].T)
        cols.append(rec.gripper_angle[i])
    table = np.column_stack(cols)
    tmp_fd, tmp_path = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(tmp_fd, "w") as fh:
            fh.write(",".join(CSV_COLUMNS) + "\n")
            np.savetxt(fh, table, delimiter=",", fmt="%.10g")
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def write_json_atomic(path, obj) -> None:
    tmp_fd, tmp_path = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(tmp_fd, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Camera-movement detection
# ---------------------------------------------------------------------------

def detect_camera_movements(
    camera_position: np.ndarray, dt: float, cfg: DetectionConfig | None = None
) -> list[MovementInterval]:
    """Find camera-movement intervals from the camera endpoint position.

    A sample is moving when the smoothed camera speed reaches ``v_on``;
    the interval extends in both directions while the speed stays above
    ``v_off``. Intervals closer than ``merge_gap_s`` are merged, and
    intervals shorter than ``min_duration_s`` are discarded.
    """
    cfg = cfg or DetectionConfig()
    pos = np.asarray(camera_position, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise InvalidParameterError("camera position must have shape (T, 3)")
    n = pos.shape[0]
    if n < 2:
        raise InvalidParameterError("need at least 2 samples")
    vel = np.gradient(pos, dt, axis=0)
    speed = np.linalg.norm(vel, axis=1)
    coeffs = sig.design_butterworth2(cfg.smooth_cutoff_hz, 1.0 / dt)
    if n >= coeffs.min_input_len:
        speed = np.abs(sig.filtfilt(coeffs, speed))

    above_off = speed >= cfg.v_off
    mask = above_off.astype(np.int8)
    starts = list(np.flatnonzero(np.diff(np.r_[0, mask]) == 1))
    ends = list(np.flatnonzero(np.diff(np.r_[mask, 0]) == -1) + 1)
    runs = [(s, e) for s, e in zip(starts, ends) if np.max(speed[s:e]) >= cfg.v_on]

    merge_gap = int(round(cfg.merge_gap_s / dt))
    merged: list[tuple[int, int]] = []
    for s, e in runs:
        if merged and s - merged[-1][1] < merge_gap:
            merged[-1] = (merged[-1][0], e)
        else:
            merged.append((s, e))

    min_len = int(round(cfg.min_duration_s / dt))
    return [MovementInterval(int(s), int(e)) for s, e in merged if e - s >= min_len]


def stationary_chunks(n_samples: int, intervals: list[MovementInterval]) -> list[tuple[int, int]]:
    """Complement of the movement intervals as half-open [start, end) ranges.

    Every gap between movements gets a chunk index, including chunks later
    skipped for being too short, so chunk identities are stable.
    """
    chunks = []
    cursor = 0
    for iv in sorted(intervals, key=lambda iv: iv.start):
        if iv.start > cursor:
            chunks.append((cursor, iv.start))
        cursor = max(cursor, iv.end)
    if cursor < n_samples:
        chunks.append((cursor, n_samples))
    return chunks


# ---------------------------------------------------------------------------
# Feature construction
# ---------------------------------------------------------------------------

def _raw_chunk_features(
    rec: KinematicRecording, intervals: list[MovementInterval]
) -> list[tuple[int, int, np.ndarray]]:
    """Unnormalized per-chunk feature matrices: (chunk_idx, start, values)."""
    coeffs_pos = sig.design_butterworth2(POSITION_CUTOFF_HZ, 1.0 / rec.dt)
    coeffs_vel = sig.design_butterworth2(VELOCITY_CUTOFF_HZ, 1.0 / rec.dt)
    min_len = max(coeffs_pos.min_input_len, coeffs_vel.min_input_len)
    out = []
    for chunk_idx, (start, end) in enumerate(stationary_chunks(rec.n_samples, intervals)):
        length = end - start
        if length < min_len:
            logger.warning(
                "recording %s: skipping chunk %d of %d samples (< %d)",
                rec.id, chunk_idx, length, min_len,
            )
            continue
        cols = np.empty((length, NUM_FEATURES))
        for i in range(NUM_INSTRUMENTS):
            base = 7 * i
            for axis in range(3):
                p = sig.filtfilt(coeffs_pos, rec.instrument_position[i, start:end, axis])
                v = sig.filtfilt(coeffs_vel, sig.differentiate(p, rec.dt))
                cols[:, base + axis] = p
                cols[:, base + 3 + axis] = v
            cols[:, base + 6] = rec.gripper_angle[i, start:end]
        out.append((chunk_idx, start, cols))
    return out


def _normalize_chunks(raw, recording_id, stats):
    fms = []
    for chunk_idx, start, cols in raw:
        values = np.empty_like(cols)
        for c in range(NUM_FEATURES):
            values[:, c] = sig.zscore(cols[:, c], stats[c])
        fms.append(FeatureMatrix(
            recording_id=recording_id,
            chunk_idx=chunk_idx,
            values=values,
            global_offsets=np.arange(start, start + cols.shape[0]),
        ))
    return fms


def build_feature_matrices(
    rec: KinematicRecording,
    intervals: list[MovementInterval],
    stats: list[sig.NormStats] | str = "fit",
) -> tuple[list[FeatureMatrix], list[sig.NormStats]]:
    """Per-chunk normalized feature matrices for one recording.

    With ``stats="fit"`` the per-column statistics are computed over all
    stationary samples of this recording and returned alongside.
    """
    fms_by_id, stats_out = build_feature_set(
        {rec.id: rec}, {rec.id: intervals}, stats=stats
    )
    return fms_by_id[rec.id], stats_out


def build_feature_set(
    recordings: dict[str, KinematicRecording],
    intervals_by_id: dict[str, list[MovementInterval]],
    stats: list[sig.NormStats] | str = "fit",
) -> tuple[dict[str, list[FeatureMatrix]], list[sig.NormStats]]:
    """Feature matrices for a set of recordings with shared normalization."""
    raw_by_id = {
        rid: _raw_chunk_features(rec, intervals_by_id[rid])
        for rid, rec in recordings.items()
    }
    if isinstance(stats, str):
        if stats != "fit":
            raise InvalidParameterError(f"stats must be a list or 'fit', got {stats!r}")
        chunks = [cols for raw in raw_by_id.values() for _, _, cols in raw]
        if not chunks:
            raise InfeasibleError(
                "no stationary chunk is long enough to fit normalization statistics"
            )
        all_rows = np.concatenate(chunks)
        stats = [sig.compute_norm_stats(all_rows[:, c]) for c in range(NUM_FEATURES)]
    if len(stats) != NUM_FEATURES:
        raise InvalidParameterError(f"need {NUM_FEATURES} per-channel statistics")
    fms_by_id = {
        rid: _normalize_chunks(raw, rid, stats) for rid, raw in raw_by_id.items()
    }
    return fms_by_id, stats


# ---------------------------------------------------------------------------
# Segmentation and splits
# ---------------------------------------------------------------------------

def extract_segments(
    fms: list[FeatureMatrix],
    intervals: list[MovementInterval],
    n_window: int,
    horizon: int,
    guard: int,
) -> list[LabeledSegment]:
    """Stride-1 candidate windows with before/not-before labels.

    Within each chunk, the window ending exactly ``horizon`` samples before
    the trailing movement onset (when the chunk is adjacent to one) is the
    single label-1 window. Windows ending at least ``guard`` samples before
    that onset, or in chunks with no trailing movement, are label-0.
    Windows in between are ambiguous and discarded.
    """
    if n_window < 1 or horizon < 0:
        raise InvalidParameterError("need n_window >= 1 and horizon >= 0")
    if guard < horizon:
        raise InvalidParameterError(f"guard {guard} must be >= horizon {horizon}")
    onsets = {iv.start for iv in intervals}
    segments: list[LabeledSegment] = []
    for fm in fms:
        t_len = fm.values.shape[0]
        if t_len < n_window:
            continue
        start_global = int(fm.global_offsets[0])
        trailing = (int(fm.global_offsets[-1]) + 1) in onsets
        for end in range(n_window - 1, t_len):
            if trailing:
                gap = t_len - 1 - end  # samples between window end and onset-1
                if gap == horizon:
                    label = 1
                elif gap >= guard:
                    label = 0
                else:
                    continue
            else:
                label = 0
            segments.append(LabeledSegment(
                values=fm.values[end - n_window + 1: end + 1],
                label=label,
                recording_id=fm.recording_id,
                chunk_idx=fm.chunk_idx,
                end_offset=start_global + end,
                horizon_samples=horizon,
            ))
    return segments


def split_dataset(
    segments: list[LabeledSegment],
    test_frac: float,
    val_frac: float,
    seed: int,
) -> DatasetSplits:
    """Balanced test/validation draws; everything left feeds the train pools.

    The test set takes ceil(test_frac * P) random positives plus an equal
    number of random negatives; the validation set repeats the rule on the
    remaining segments.
    """
    if not (0 < test_frac < 1 and 0 < val_frac < 1):
        raise InvalidParameterError("fractions must lie in (0, 1)")
    pos = sorted((s for s in segments if s.label == 1), key=LabeledSegment.key)
    neg = sorted((s for s in segments if s.label == 0), key=LabeledSegment.key)
    if len(pos) < 2:
        raise InfeasibleError(f"need at least 2 label-1 segments, got {len(pos)}")
    rng = np.random.default_rng(seed)

    def draw(pool: list, count: int) -> tuple[list, list]:
        idx = rng.permutation(len(pool))
        picked = [pool[i] for i in idx[:count]]
        rest = [pool[i] for i in sorted(idx[count:])]
        return picked, rest

    n_test = math.ceil(test_frac * len(pos))
    if n_test > len(neg):
        raise InfeasibleError("not enough label-0 segments to balance the test set")
    test_pos, pos = draw(pos, n_test)
    test_neg, neg = draw(neg, n_test)

    n_val = math.ceil(val_frac * len(pos))
    if n_val > len(neg) or n_val < 1 or not pos:
        raise InfeasibleError("not enough segments left to build the validation set")
    val_pos, pos = draw(pos, n_val)
    val_neg, neg = draw(neg, n_val)

    return DatasetSplits(
        test=test_pos + test_neg,
        validation=val_pos + val_neg,
        train_pool_pos=pos,
        train_pool_neg=neg,
        seed=seed,
        provenance={"test_frac": test_frac, "val_frac": val_frac},
    )


def group_guard_filter(splits: DatasetSplits, min_gap: int) -> DatasetSplits:
    """Drop train segments overlapping test/validation windows in the same chunk.

    A train-pool segment is removed when its end offset lies within
    ``min_gap`` samples of a held-out segment's end offset in the same
    (recording, chunk). ``min_gap`` 0 is the identity.
    """
    if min_gap <= 0:
        return splits
    protected: dict[tuple[str, int], list[int]] = {}
    for seg in splits.test + splits.validation:
        protected.setdefault((seg.recording_id, seg.chunk_idx), []).append(seg.end_offset)
    for ends in protected.values():
        ends.sort()

    def keep(seg: LabeledSegment) -> bool:
        ends = protected.get((seg.recording_id, seg.chunk_idx))
        if not ends:
            return True
        arr = np.asarray(ends)
        return not bool(np.any(np.abs(arr - seg.end_offset) < min_gap))

    return replace(
        splits,
        train_pool_pos=[s for s in splits.train_pool_pos if keep(s)],
        train_pool_neg=[s for s in splits.train_pool_neg if keep(s)],
        provenance={**splits.provenance, "group_guard_min_gap": min_gap},
    )


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

MANIFEST_VERSION = 1


def build_manifest(
    recording_paths: dict[str, str],
    detection: DetectionConfig,
    n_window: int,
    horizon: int,
    guard: int,
    seed: int,
    test_frac: float,
    val_frac: float,
    stats: list[sig.NormStats],
    splits: DatasetSplits,
    dt: float,
    group_guard_min_gap: int = 0,
) -> dict:
    """JSON-serializable manifest that fully reconstructs the splits."""
    coeffs_pos = sig.design_butterworth2(POSITION_CUTOFF_HZ, 1.0 / dt)
    coeffs_vel = sig.design_butterworth2(VELOCITY_CUTOFF_HZ, 1.0 / dt)

    def coeff_block(c: sig.FilterCoefficients) -> dict:
        return {
            "b": [float(f"{v:.17g}") for v in c.b],
            "a": [float(f"{v:.17g}") for v in c.a],
            "cutoff_hz": c.cutoff_hz,
            "sample_rate_hz": c.sample_rate_hz,
        }

    def membership(segs: list[LabeledSegment]) -> list:
        return sorted(
            [[s.recording_id, s.chunk_idx, s.end_offset, s.label] for s in segs]
        )

    return {
        "version": MANIFEST_VERSION,
        "dt": dt,
        "recordings": {
            rid: {"path": str(p), "sha256": file_digest(p)}
            for rid, p in sorted(recording_paths.items())
        },
        "detection": {
            "v_on": detection.v_on,
            "v_off": detection.v_off,
            "min_duration_s": detection.min_duration_s,
            "merge_gap_s": detection.merge_gap_s,
            "smooth_cutoff_hz": detection.smooth_cutoff_hz,
        },
        "filters": {
            "position": coeff_block(coeffs_pos),
            "velocity": coeff_block(coeffs_vel),
        },
        "n_window": n_window,
        "horizon_samples": horizon,
        "guard_samples": guard,
        "seed": seed,
        "test_frac": test_frac,
        "val_frac": val_frac,
        "group_guard_min_gap": group_guard_min_gap,
        "norm_stats": [
            {"mean": s.mean, "std": s.std, "degenerate": s.degenerate} for s in stats
        ],
        "splits": {
            "test": membership(splits.test),
            "validation": membership(splits.validation),
        },
    }


def load_manifest(path) -> dict:
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("version") != MANIFEST_VERSION:
        raise DataFormatError(f"{path}: unsupported manifest version")
    return manifest


def stats_from_manifest(manifest: dict) -> list[sig.NormStats]:
    return [
        sig.NormStats(mean=s["mean"], std=s["std"], degenerate=s["degenerate"])
        for s in manifest["norm_stats"]
    ]


def detection_from_manifest(manifest: dict) -> DetectionConfig:
    d = manifest["detection"]
    return DetectionConfig(
        v_on=d["v_on"], v_off=d["v_off"], min_duration_s=d["min_duration_s"],
        merge_gap_s=d["merge_gap_s"], smooth_cutoff_hz=d["smooth_cutoff_hz"],
    )


def reconstruct_splits(
    manifest: dict,
    recordings: dict[str, KinematicRecording] | None = None,
    horizon: int | None = None,
) -> DatasetSplits:
    """Rebuild splits from a manifest, optionally at a different horizon.

    Held-out membership is keyed by (recording_id, chunk_idx, end_offset).
    When re-targeting a horizon, label-1 windows shift so each still ends
    exactly ``horizon`` samples before its movement onset; label-0 windows
    are unchanged. Everything not held out lands in the train pools.
    """
    base_horizon = manifest["horizon_samples"]
    horizon = base_horizon if horizon is None else horizon
    if horizon > manifest["guard_samples"]:
        raise InvalidParameterError("horizon exceeds the manifest guard")
    if recordings is None:
        recordings = {
            rid: load_recording(info["path"], recording_id=rid)
            for rid, info in manifest["recordings"].items()
        }
    detection = detection_from_manifest(manifest)
    intervals_by_id = {
        rid: detect_camera_movements(rec.camera_position, rec.dt, detection)
        for rid, rec in recordings.items()
    }
    fms_by_id, _ = build_feature_set(
        recordings, intervals_by_id, stats=stats_from_manifest(manifest)
    )
    segments: list[LabeledSegment] = []
    for rid, fms in sorted(fms_by_id.items()):
        segments.extend(extract_segments(
            fms, intervals_by_id[rid], manifest["n_window"], horizon,
            manifest["guard_samples"],
        ))

    by_key = {(s.recording_id, s.chunk_idx, s.end_offset): s for s in segments}

    def resolve(member) -> LabeledSegment | None:
        rid, chunk, end, label = member
        if label == 1:
            end = end + base_horizon - horizon
        seg = by_key.get((rid, chunk, end))
        if seg is None or seg.label != label:
            logger.warning("manifest member %s unavailable at horizon %d", member, horizon)
            return None
        return seg

    test = [s for m in manifest["splits"]["test"] if (s := resolve(m)) is not None]
    validation = [s for m in manifest["splits"]["validation"] if (s := resolve(m)) is not None]
    held = {id(s) for s in test + validation}
    pool_pos = [s for s in segments if id(s) not in held and s.label == 1]
    pool_neg = [s for s in segments if id(s) not in held and s.label == 0]
    splits = DatasetSplits(
        test=test, validation=validation,
        train_pool_pos=pool_pos, train_pool_neg=pool_neg,
        seed=manifest["seed"],
        provenance={"manifest_horizon": base_horizon, "horizon": horizon},
    )
    return group_guard_filter(splits, manifest.get("group_guard_min_gap", 0))


# ---------------------------------------------------------------------------
# Segment archive
# ---------------------------------------------------------------------------

ARCHIVE_MAGIC = b"CSEG"
ARCHIVE_VERSION = 1
_ARCHIVE_HEADER = struct.Struct("<4sIIQ12x")  # magic, version, N, count; 32 bytes


def write_segment_archive(path, segments: list[LabeledSegment], n_window: int) -> None:
    """Binary cache: 32-byte header then row-major N x 21 float64 per segment."""
    tmp_fd, tmp_path = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(tmp_fd, "wb") as fh:
            fh.write(_ARCHIVE_HEADER.pack(ARCHIVE_MAGIC, ARCHIVE_VERSION, n_window, len(segments)))
            for seg in segments:
                if seg.values.shape != (n_window, NUM_FEATURES):
                    raise InvalidParameterError("segment shape mismatch for archive")
                fh.write(np.ascontiguousarray(seg.values, dtype="<f8").tobytes())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def read_segment_archive(path) -> np.ndarray:
    """Return the archived segment values with shape (count, N, 21)."""
    with open(path, "rb") as fh:
        header = fh.read(_ARCHIVE_HEADER.size)
        if len(header) != _ARCHIVE_HEADER.size:
            raise DataFormatError(f"{path}: truncated archive header")
        magic, version, n_window, count = _ARCHIVE_HEADER.unpack(header)
        if magic != ARCHIVE_MAGIC or version != ARCHIVE_VERSION:
            raise DataFormatError(f"{path}: not a segment archive")
        payload = fh.read()
    expected = count * n_window * NUM_FEATURES * 8
    if len(payload) != expected:
        raise DataFormatError(f"{path}: archive payload size mismatch")
    data = np.frombuffer(payload, dtype="<f8")
    return data.reshape(count, n_window, NUM_FEATURES).copy()
