"""End-to-end CLI tests: gen -> prepare -> train -> eval -> predict,
exit codes, config-file defaults and output determinism."""

import json
import os

import pytest

from camseer import cli


def run(argv):
    return cli.main(argv)


GEN_ARGS = [
    "gen", "--recordings", "2", "--duration", "120", "--events", "4",
    "--seed", "0",
]

TRAIN_ARGS = [
    "--k", "3", "--hidden", "6", "--batchnorm", "1", "--dropout", "0.2",
    "--l2", "0", "--lr", "0.003", "--decay", "0.995", "--batch", "16",
    "--max-epochs", "8", "--patience", "8", "--seed", "0",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One full pipeline run shared by the read-only assertions below."""
    root = tmp_path_factory.mktemp("cli")
    raw = root / "raw"
    prep = root / "prep"
    model = root / "model"
    assert run(GEN_ARGS + ["--out-dir", str(raw)]) == 0
    assert run([
        "prepare", "--recordings", str(raw), "--out-dir", str(prep),
        "--seed", "0",
    ]) == 0
    manifest = prep / "manifest_n50.json"
    assert run([
        "train", "--manifest", str(manifest), "--out-dir", str(model),
    ] + TRAIN_ARGS) == 0
    return {"root": root, "raw": raw, "prep": prep, "model": model,
            "manifest": manifest}


class TestPipeline:
    def test_gen_outputs(self, workspace):
        names = sorted(os.listdir(workspace["raw"]))
        assert names == [
            "rec_0000.csv", "rec_0000.truth.json",
            "rec_0001.csv", "rec_0001.truth.json",
        ]

    def test_prepare_manifest_contents(self, workspace):
        manifest = json.loads(workspace["manifest"].read_text())
        assert manifest["n_window"] == 50
        assert len(manifest["norm_stats"]) == 21
        assert set(manifest["recordings"]) == {"rec_0000", "rec_0001"}
        assert manifest["splits"]["test"]
        assert manifest["splits"]["validation"]

    def test_train_outputs(self, workspace):
        files = sorted(os.listdir(workspace["model"]))
        assert "ensemble.json" in files
        assert "training_log.json" in files
        assert sum(f.endswith(".cnet") for f in files) == 3

    def test_eval_report(self, workspace, capsys):
        out = workspace["root"] / "report.json"
        code = run([
            "eval", "--manifest", str(workspace["manifest"]),
            "--ensemble", str(workspace["model"]), "--out", str(out),
        ])
        assert code == 0
        report = json.loads(out.read_text())
        assert set(report) >= {"accuracy", "tpr", "tnr", "confusion", "split"}
        printed = json.loads(capsys.readouterr().out)
        assert printed == report

    def test_eval_stability_csv(self, workspace, capsys):
        out = workspace["root"] / "stability.csv"
        code = run([
            "eval", "--manifest", str(workspace["manifest"]),
            "--ensemble", str(workspace["model"]),
            "--stability", "--out", str(out),
        ])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "k,accuracy"
        assert len(lines) == 4  # header + one row per prefix size

    def test_predict_streams_votes(self, workspace, capsys):
        code = run([
            "predict", "--recording", str(workspace["raw"] / "rec_0000.csv"),
            "--ensemble", str(workspace["model"]), "--stride", "100",
        ])
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines
        for line in lines:
            t, votes, cls = line.split("\t")
            float(t)
            assert 0 <= int(votes) <= 3
            assert cls in ("0", "1")

    def test_relative_table_from_reports(self, workspace, tmp_path, capsys):
        base = {"horizon_samples": 0,
                "summary": {m: {"mean": 0.9, "std": 0.0} for m in ("accuracy", "tpr", "tnr")}}
        far = {"horizon_samples": 25,
               "summary": {m: {"mean": 0.45, "std": 0.0} for m in ("accuracy", "tpr", "tnr")}}
        p0 = tmp_path / "h0.json"
        p25 = tmp_path / "h25.json"
        p0.write_text(json.dumps(base))
        p25.write_text(json.dumps(far))
        assert run(["eval", "--relative", str(p0), str(p25)]) == 0
        table = json.loads(capsys.readouterr().out)
        assert table["relative_to_horizon_0"]["25"]["accuracy"] == pytest.approx(50.0)


class TestDeterminism:
    def test_gen_and_prepare_are_byte_identical(self, tmp_path):
        blobs = []
        for tag in ("a", "b"):
            raw = tmp_path / f"raw_{tag}"
            prep = tmp_path / f"prep_{tag}"
            assert run(GEN_ARGS + ["--out-dir", str(raw)]) == 0
            assert run([
                "prepare", "--recordings", str(raw), "--out-dir", str(prep),
                "--seed", "0",
            ]) == 0
            manifest = json.loads((prep / "manifest_n50.json").read_text())
            # Recording paths differ between runs; everything else must not.
            del manifest["recordings"]
            blobs.append((
                (raw / "rec_0000.csv").read_bytes(),
                json.dumps(manifest, sort_keys=True),
            ))
        assert blobs[0] == blobs[1]


class TestExitCodes:
    def test_missing_recordings_is_data_error(self, tmp_path):
        assert run([
            "prepare", "--recordings", str(tmp_path / "nowhere"),
            "--out-dir", str(tmp_path / "out"),
        ]) == 3

    def test_malformed_csv_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("not,a,recording\n1,2,3\n")
        assert run([
            "prepare", "--recordings", str(bad),
            "--out-dir", str(tmp_path / "out"),
        ]) == 3

    def test_invalid_parameters_are_usage_errors(self, tmp_path):
        raw = tmp_path / "raw"
        assert run(["gen", "--out-dir", str(raw), "--recordings", "1",
                    "--duration", "60", "--events", "2", "--seed", "0"]) == 0
        # Guard below horizon is a configuration error.
        assert run([
            "prepare", "--recordings", str(raw), "--out-dir", str(tmp_path / "p"),
            "--horizon", "3.0", "--guard", "1.0",
        ]) == 2

    def test_unknown_flag_is_usage_error(self):
        assert run(["gen", "--bogus"]) == 2

    def test_missing_subcommand_is_usage_error(self):
        assert run([]) == 2

    def test_infeasible_generation_is_usage_error(self, tmp_path):
        assert run([
            "gen", "--out-dir", str(tmp_path), "--duration", "30",
            "--events", "10",
        ]) == 2

    def test_missing_model_is_data_error(self, tmp_path):
        assert run([
            "eval", "--manifest", str(tmp_path / "nope.json"),
            "--ensemble", str(tmp_path / "nope"),
        ]) == 3


class TestConfigFile:
    def test_config_file_sets_defaults(self, tmp_path, workspace, capsys):
        cfg = tmp_path / "gen.json"
        cfg.write_text(json.dumps({"recordings": 1, "duration": 60.0,
                                   "events": 2, "seed": 9}))
        out = tmp_path / "raw"
        assert run(["gen", "--config", str(cfg), "--out-dir", str(out)]) == 0
        assert sorted(os.listdir(out)) == ["rec_0009.csv", "rec_0009.truth.json"]

    def test_explicit_flag_beats_config(self, tmp_path):
        cfg = tmp_path / "gen.json"
        cfg.write_text(json.dumps({"recordings": 2, "duration": 60.0,
                                   "events": 2, "seed": 9}))
        out = tmp_path / "raw"
        assert run(["gen", "--config", str(cfg), "--out-dir", str(out),
                    "--recordings", "1"]) == 0
        assert sum(f.endswith(".csv") for f in os.listdir(out)) == 1

    def test_unreadable_config_is_usage_error(self, tmp_path):
        assert run(["gen", "--config", str(tmp_path / "missing.json"),
                    "--out-dir", str(tmp_path)]) == 2

    def test_non_object_config_is_usage_error(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text("[1, 2, 3]")
        assert run(["gen", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2
