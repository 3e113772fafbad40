"""Tests for recording I/O, movement detection, features, segmentation,
splits, manifests and the segment archive."""

import json

import numpy as np
import pytest

from camseer import dataset as ds
from camseer import signal as sig
from camseer.errors import DataFormatError, InfeasibleError, InvalidParameterError

DT = 0.02


def make_recording(n=2000, seed=0, rid="rec"):
    rng = np.random.default_rng(seed)
    camera = np.zeros((n, 3))
    instrument = rng.normal(size=(3, n, 3)).cumsum(axis=1) * 0.001
    gripper = rng.normal(size=(3, n)) * 0.1 + 0.5
    return ds.KinematicRecording(
        id=rid, dt=DT, camera_position=camera,
        instrument_position=instrument, gripper_angle=gripper,
    )


def add_camera_move(rec, start, length, amp=0.05):
    ramp = np.linspace(0.0, amp, length + 1)
    rec.camera_position[start:start + length + 1, 0] += ramp
    rec.camera_position[start + length + 1:, 0] += amp


class TestRecordingIO:
    def test_round_trip(self, tmp_path):
        rec = make_recording(200)
        path = tmp_path / "rec.csv"
        ds.save_recording(rec, path)
        loaded = ds.load_recording(path)
        assert loaded.id == "rec"
        assert loaded.dt == pytest.approx(DT)
        np.testing.assert_allclose(loaded.camera_position, rec.camera_position, atol=1e-8)
        np.testing.assert_allclose(
            loaded.instrument_position, rec.instrument_position, atol=1e-8
        )
        np.testing.assert_allclose(loaded.gripper_angle, rec.gripper_angle, atol=1e-8)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(DataFormatError, match="header"):
            ds.load_recording(path)

    def test_non_finite_value_named_by_position(self, tmp_path):
        rec = make_recording(100)
        path = tmp_path / "rec.csv"
        ds.save_recording(rec, path)
        lines = path.read_text().splitlines()
        cells = lines[3].split(",")
        cells[2] = "nan"
        lines[3] = ",".join(cells)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataFormatError, match="cam_y"):
            ds.load_recording(path)

    def test_non_monotonic_time_rejected(self, tmp_path):
        rec = make_recording(100)
        path = tmp_path / "rec.csv"
        ds.save_recording(rec, path)
        lines = path.read_text().splitlines()
        cells = lines[5].split(",")
        cells[0] = "0.0"
        lines[5] = ",".join(cells)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataFormatError, match="monotonic"):
            ds.load_recording(path)

    def test_non_uniform_sampling_rejected(self, tmp_path):
        rec = make_recording(100)
        path = tmp_path / "rec.csv"
        ds.save_recording(rec, path)
        lines = path.read_text().splitlines()
        cells = lines[50].split(",")
        cells[0] = str(float(cells[0]) + 0.01)
        lines[50] = ",".join(cells)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataFormatError, match="non-uniform"):
            ds.load_recording(path)


class TestDetection:
    def test_single_movement_located(self):
        rec = make_recording(1500)
        add_camera_move(rec, 600, 40)
        intervals = ds.detect_camera_movements(rec.camera_position, DT)
        assert len(intervals) == 1
        iv = intervals[0]
        assert abs(iv.start - 600) <= 5
        assert abs(iv.end - 640) <= 8

    def test_below_minimum_duration_discarded(self):
        # A 0.6 s movement is dropped when the minimum duration is 1 s.
        rec = make_recording(1500)
        add_camera_move(rec, 600, 30)
        cfg = ds.DetectionConfig(min_duration_s=1.0)
        assert ds.detect_camera_movements(rec.camera_position, DT, cfg) == []

    def test_slow_drift_below_seed_threshold_ignored(self):
        # Drift slower than v_on never seeds an interval.
        rec = make_recording(1500)
        rec.camera_position[:, 0] = np.arange(1500) * DT * 0.001  # 1 mm/s
        assert ds.detect_camera_movements(rec.camera_position, DT) == []

    def test_nearby_movements_merged(self):
        rec = make_recording(2000)
        add_camera_move(rec, 600, 30)
        add_camera_move(rec, 635, 30)  # 5-sample gap, below 0.2 s
        intervals = ds.detect_camera_movements(rec.camera_position, DT)
        assert len(intervals) == 1

    def test_separated_movements_stay_apart(self):
        rec = make_recording(3000)
        add_camera_move(rec, 600, 30)
        add_camera_move(rec, 1600, 30)
        intervals = ds.detect_camera_movements(rec.camera_position, DT)
        assert len(intervals) == 2

    def test_still_camera_yields_nothing(self):
        rec = make_recording(1000)
        assert ds.detect_camera_movements(rec.camera_position, DT) == []

    def test_interval_fields_are_python_ints(self):
        rec = make_recording(1500)
        add_camera_move(rec, 600, 40)
        iv = ds.detect_camera_movements(rec.camera_position, DT)[0]
        assert type(iv.start) is int and type(iv.end) is int

    def test_bad_shapes_rejected(self):
        with pytest.raises(InvalidParameterError):
            ds.detect_camera_movements(np.zeros((10, 2)), DT)
        with pytest.raises(InvalidParameterError):
            ds.detect_camera_movements(np.zeros((1, 3)), DT)


class TestStationaryChunks:
    def test_complement_of_intervals(self):
        intervals = [ds.MovementInterval(100, 150), ds.MovementInterval(400, 420)]
        chunks = ds.stationary_chunks(1000, intervals)
        assert chunks == [(0, 100), (150, 400), (420, 1000)]

    def test_no_intervals(self):
        assert ds.stationary_chunks(500, []) == [(0, 500)]

    def test_interval_at_edges(self):
        intervals = [ds.MovementInterval(0, 50), ds.MovementInterval(950, 1000)]
        assert ds.stationary_chunks(1000, intervals) == [(50, 950)]

    def test_invalid_interval_rejected(self):
        with pytest.raises(InvalidParameterError):
            ds.MovementInterval(10, 10)
        with pytest.raises(InvalidParameterError):
            ds.MovementInterval(-1, 5)


class TestFeatures:
    def test_shapes_and_column_count(self):
        rec = make_recording(2000)
        add_camera_move(rec, 900, 40)
        intervals = ds.detect_camera_movements(rec.camera_position, DT)
        fms, stats = ds.build_feature_matrices(rec, intervals)
        assert len(fms) == 2
        assert len(stats) == ds.NUM_FEATURES
        for fm in fms:
            assert fm.values.shape[1] == ds.NUM_FEATURES
            assert fm.values.shape[0] == fm.global_offsets.size

    def test_columns_are_z_scored(self):
        rec = make_recording(3000)
        fms, _ = ds.build_feature_matrices(rec, [])
        values = np.concatenate([fm.values for fm in fms])
        np.testing.assert_allclose(values.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(values.std(axis=0, ddof=1), 1.0, atol=1e-9)

    def test_velocity_tracks_position_slope(self):
        # A constant-velocity instrument axis must z-score to a constant
        # (degenerate) velocity channel: std ~ 0 -> all zeros.
        rec = make_recording(1000)
        rec.instrument_position[0, :, 0] = np.arange(1000) * 0.001
        fms, stats = ds.build_feature_matrices(rec, [])
        v_col = fms[0].values[:, 3]
        interior = v_col[60:-60]
        assert np.max(np.abs(interior - interior.mean())) < 1e-4

    def test_short_chunk_skipped(self):
        rec = make_recording(600)
        # One usable chunk plus one 20-sample chunk that must be skipped.
        intervals = [ds.MovementInterval(500, 580)]
        fms, _ = ds.build_feature_matrices(rec, intervals)
        assert [fm.chunk_idx for fm in fms] == [0]

    def test_all_chunks_too_short_rejected(self):
        rec = make_recording(600)
        intervals = [ds.MovementInterval(10, 580)]  # leaves two tiny chunks
        with pytest.raises(InfeasibleError):
            ds.build_feature_matrices(rec, intervals)

    def test_external_stats_reused_exactly(self):
        rec = make_recording(1500)
        _, stats = ds.build_feature_matrices(rec, [])
        other = make_recording(1500, seed=9, rid="other")
        fms_a, _ = ds.build_feature_matrices(other, [], stats=stats)
        fms_b, _ = ds.build_feature_matrices(other, [], stats=stats)
        np.testing.assert_array_equal(fms_a[0].values, fms_b[0].values)

    def test_shared_normalization_across_recordings(self):
        recs = {f"r{i}": make_recording(1500, seed=i, rid=f"r{i}") for i in range(2)}
        intervals = {rid: [] for rid in recs}
        fms_by_id, stats = ds.build_feature_set(recs, intervals)
        all_rows = np.concatenate(
            [fm.values for fms in fms_by_id.values() for fm in fms]
        )
        np.testing.assert_allclose(all_rows.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(all_rows.std(axis=0, ddof=1), 1.0, atol=1e-9)


def chunk_fixture(t_len, with_onset, rid="rec", chunk_idx=0, start=0):
    """A FeatureMatrix plus the interval list implied by ``with_onset``."""
    values = np.zeros((t_len, ds.NUM_FEATURES))
    fm = ds.FeatureMatrix(
        recording_id=rid, chunk_idx=chunk_idx, values=values,
        global_offsets=np.arange(start, start + t_len),
    )
    intervals = []
    if with_onset:
        onset = start + t_len
        intervals = [ds.MovementInterval(onset, onset + 10)]
    return fm, intervals


class TestSegmentation:
    def test_window_count_and_overlap(self):
        t_len, n = 300, 50
        fm, intervals = chunk_fixture(t_len, with_onset=False)
        segs = ds.extract_segments([fm], intervals, n, 0, 100)
        # Stride-1: one window per end position, t_len - n + 1 in total.
        assert len(segs) == t_len - n + 1
        ends = [s.end_offset for s in segs]
        assert ends == list(range(n - 1, t_len))
        assert all(s.values.shape == (n, ds.NUM_FEATURES) for s in segs)

    @pytest.mark.parametrize("horizon", [0, 12, 25, 50])
    def test_single_positive_at_each_horizon(self, horizon):
        t_len, n, guard = 400, 50, 100
        fm, intervals = chunk_fixture(t_len, with_onset=True)
        segs = ds.extract_segments([fm], intervals, n, horizon, guard)
        pos = [s for s in segs if s.label == 1]
        assert len(pos) == 1
        # The positive window ends exactly `horizon` samples before the onset.
        assert pos[0].end_offset == t_len - 1 - horizon

    def test_dead_zone_between_guard_and_horizon(self):
        t_len, n, horizon, guard = 400, 50, 10, 100
        fm, intervals = chunk_fixture(t_len, with_onset=True)
        segs = ds.extract_segments([fm], intervals, n, horizon, guard)
        by_end = {s.end_offset: s.label for s in segs}
        for end in range(n - 1, t_len):
            gap = t_len - 1 - end
            if gap == horizon:
                assert by_end[end] == 1
            elif gap >= guard:
                assert by_end[end] == 0
            else:
                assert end not in by_end

    def test_chunk_without_onset_is_all_negative(self):
        fm, intervals = chunk_fixture(200, with_onset=False)
        segs = ds.extract_segments([fm], intervals, 50, 0, 100)
        assert all(s.label == 0 for s in segs)

    def test_chunk_shorter_than_window_skipped(self):
        fm, intervals = chunk_fixture(30, with_onset=True)
        assert ds.extract_segments([fm], intervals, 50, 0, 100) == []

    def test_guard_below_horizon_rejected(self):
        fm, intervals = chunk_fixture(200, with_onset=True)
        with pytest.raises(InvalidParameterError):
            ds.extract_segments([fm], intervals, 50, 20, 10)

    def test_segment_values_are_views(self):
        fm, intervals = chunk_fixture(200, with_onset=False)
        segs = ds.extract_segments([fm], intervals, 50, 0, 100)
        assert segs[0].values.base is fm.values


def labeled_pool(num_pos, num_neg, t_len=50):
    values = np.zeros((t_len, ds.NUM_FEATURES))
    segs = []
    for j in range(num_pos):
        segs.append(ds.LabeledSegment(
            values=values, label=1, recording_id=f"r{j % 3}",
            chunk_idx=j, end_offset=100 + j, horizon_samples=0,
        ))
    for j in range(num_neg):
        segs.append(ds.LabeledSegment(
            values=values, label=0, recording_id=f"r{j % 3}",
            chunk_idx=j, end_offset=10_000 + j, horizon_samples=0,
        ))
    return segs


class TestSplits:
    def test_balanced_counts(self):
        segs = labeled_pool(433, 5000)
        splits = ds.split_dataset(segs, 0.15, 0.15, 0)
        # ceil(0.15 * 433) = 65 test positives; ceil(0.15 * 368) = 56 val.
        assert len(splits.test) == 130
        assert sum(s.label for s in splits.test) == 65
        assert len(splits.validation) == 112
        assert sum(s.label for s in splits.validation) == 56
        assert len(splits.train_pool_pos) == 433 - 65 - 56
        assert len(splits.train_pool_neg) == 5000 - 65 - 56

    def test_no_overlap_between_splits(self):
        segs = labeled_pool(40, 400)
        splits = ds.split_dataset(segs, 0.2, 0.2, 1)
        seen = [s.key() for s in (splits.test + splits.validation
                                  + splits.train_pool_pos + splits.train_pool_neg)]
        assert len(seen) == len(set(seen)) == len(segs)

    def test_same_seed_same_split(self):
        segs = labeled_pool(40, 400)
        a = ds.split_dataset(segs, 0.2, 0.2, 7)
        b = ds.split_dataset(segs, 0.2, 0.2, 7)
        assert [s.key() for s in a.test] == [s.key() for s in b.test]
        assert [s.key() for s in a.validation] == [s.key() for s in b.validation]

    def test_different_seed_different_split(self):
        segs = labeled_pool(40, 400)
        a = ds.split_dataset(segs, 0.2, 0.2, 0)
        b = ds.split_dataset(segs, 0.2, 0.2, 1)
        assert {s.key() for s in a.test} != {s.key() for s in b.test}

    def test_too_few_positives_rejected(self):
        with pytest.raises(InfeasibleError):
            ds.split_dataset(labeled_pool(1, 100), 0.2, 0.2, 0)

    def test_bad_fractions_rejected(self):
        segs = labeled_pool(40, 400)
        with pytest.raises(InvalidParameterError):
            ds.split_dataset(segs, 0.0, 0.2, 0)
        with pytest.raises(InvalidParameterError):
            ds.split_dataset(segs, 0.2, 1.0, 0)

    def test_group_guard_drops_neighbours(self):
        segs = labeled_pool(10, 100)
        splits = ds.split_dataset(segs, 0.2, 0.2, 3)
        filtered = ds.group_guard_filter(splits, 50)
        held = {(s.recording_id, s.chunk_idx, s.end_offset)
                for s in splits.test + splits.validation}
        for seg in filtered.train_pool_pos + filtered.train_pool_neg:
            for rid, chunk, end in held:
                if (seg.recording_id, seg.chunk_idx) == (rid, chunk):
                    assert abs(seg.end_offset - end) >= 50

    def test_group_guard_zero_is_identity(self):
        segs = labeled_pool(10, 100)
        splits = ds.split_dataset(segs, 0.2, 0.2, 3)
        assert ds.group_guard_filter(splits, 0) is splits


def prepared_corpus(tmp_path, num_recordings=2, n=3000, horizon=0):
    paths = {}
    recs = {}
    for r in range(num_recordings):
        rec = make_recording(n, seed=r, rid=f"r{r}")
        for k in range(4):
            add_camera_move(rec, 500 + 600 * k, 40)
        path = tmp_path / f"r{r}.csv"
        ds.save_recording(rec, path)
        paths[rec.id] = str(path)
        recs[rec.id] = rec
    detection = ds.DetectionConfig()
    intervals = {
        rid: ds.detect_camera_movements(rec.camera_position, rec.dt, detection)
        for rid, rec in recs.items()
    }
    fms_by_id, stats = ds.build_feature_set(recs, intervals)
    segments = []
    for rid in sorted(fms_by_id):
        segments.extend(ds.extract_segments(fms_by_id[rid], intervals[rid], 50, horizon, 100))
    splits = ds.split_dataset(segments, 0.2, 0.2, 0)
    manifest = ds.build_manifest(
        recording_paths=paths, detection=detection, n_window=50, horizon=horizon,
        guard=100, seed=0, test_frac=0.2, val_frac=0.2, stats=stats,
        splits=splits, dt=DT,
    )
    return recs, splits, manifest


class TestManifest:
    def test_json_round_trip(self, tmp_path):
        _, _, manifest = prepared_corpus(tmp_path)
        path = tmp_path / "manifest.json"
        ds.write_json_atomic(path, manifest)
        assert ds.load_manifest(path) == manifest

    def test_byte_identical_rebuild(self, tmp_path):
        _, _, m1 = prepared_corpus(tmp_path)
        _, _, m2 = prepared_corpus(tmp_path)
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        ds.write_json_atomic(a, m1)
        ds.write_json_atomic(b, m2)
        assert a.read_bytes() == b.read_bytes()

    def test_reconstruct_recovers_membership(self, tmp_path):
        recs, splits, manifest = prepared_corpus(tmp_path)
        rebuilt = ds.reconstruct_splits(manifest, recordings=recs)
        assert {s.key() for s in rebuilt.test} == {s.key() for s in splits.test}
        assert ({s.key() for s in rebuilt.validation}
                == {s.key() for s in splits.validation})
        assert len(rebuilt.train_pool_pos) == len(splits.train_pool_pos)
        assert len(rebuilt.train_pool_neg) == len(splits.train_pool_neg)

    def test_reconstruct_retargets_horizon(self, tmp_path):
        recs, _, manifest = prepared_corpus(tmp_path)
        shifted = ds.reconstruct_splits(manifest, recordings=recs, horizon=12)
        base = ds.reconstruct_splits(manifest, recordings=recs)
        base_pos = sorted(s.end_offset for s in base.test if s.label == 1)
        new_pos = sorted(s.end_offset for s in shifted.test if s.label == 1)
        assert [e - 12 for e in base_pos] == new_pos
        # Negatives keep their identity.
        assert ({s.key() for s in shifted.test if s.label == 0}
                == {s.key() for s in base.test if s.label == 0})

    def test_horizon_beyond_guard_rejected(self, tmp_path):
        recs, _, manifest = prepared_corpus(tmp_path)
        with pytest.raises(InvalidParameterError):
            ds.reconstruct_splits(manifest, recordings=recs, horizon=101)

    def test_unsupported_version_rejected(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"version": 99}))
        with pytest.raises(DataFormatError):
            ds.load_manifest(path)

    def test_stats_round_trip(self, tmp_path):
        _, _, manifest = prepared_corpus(tmp_path)
        stats = ds.stats_from_manifest(manifest)
        assert len(stats) == ds.NUM_FEATURES
        assert all(isinstance(s, sig.NormStats) for s in stats)


class TestSegmentArchive:
    def test_round_trip(self, tmp_path):
        segs = labeled_pool(5, 5)
        rng = np.random.default_rng(0)
        for s in segs:
            s.values = rng.normal(size=(50, ds.NUM_FEATURES))
        path = tmp_path / "segments.cseg"
        ds.write_segment_archive(path, segs, 50)
        data = ds.read_segment_archive(path)
        assert data.shape == (10, 50, ds.NUM_FEATURES)
        for j, s in enumerate(segs):
            np.testing.assert_array_equal(data[j], s.values)

    def test_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.cseg"
        path.write_bytes(b"\x00" * 64)
        with pytest.raises(DataFormatError):
            ds.read_segment_archive(path)

    def test_rejects_truncated_payload(self, tmp_path):
        segs = labeled_pool(3, 3)
        path = tmp_path / "segments.cseg"
        ds.write_segment_archive(path, segs, 50)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(DataFormatError):
            ds.read_segment_archive(path)

    def test_rejects_shape_mismatch(self, tmp_path):
        segs = labeled_pool(2, 0, t_len=40)
        with pytest.raises(InvalidParameterError):
            ds.write_segment_archive(tmp_path / "x.cseg", segs, 50)
