import json
import os
from pathlib import Path

import pytest

from anglekit.cli import build_parser, main


def run_cli(args, capsys):
    code = main(args)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestVelocity:
    def test_prints_reference_value(self, capsys):
        code, out, _ = run_cli(
            ["velocity", "--fd", "1000", "--f0", "5e6", "--c", "1540", "--theta", "0"],
            capsys,
        )
        assert code == 0
        assert out.strip() == "0.154"

    def test_singular_angle_is_usage_error(self, capsys):
        code, _, err = run_cli(
            ["velocity", "--fd", "1000", "--f0", "5e6", "--c", "1540", "--theta", "90"],
            capsys,
        )
        assert code == 1
        assert "undefined" in err

    def test_unknown_flag_usage_error(self, capsys):
        code, _, err = run_cli(
            ["velocity", "--fd", "1", "--f0", "1", "--c", "1", "--theta", "0",
             "--bogus", "1"],
            capsys,
        )
        assert code == 1
        assert "usage" in err.lower() or "error" in err.lower()


class TestHelp:
    @pytest.mark.parametrize(
        "command", ["synth", "augment", "features", "train", "eval", "report",
                    "velocity", "annotate"]
    )
    def test_help_lists_flags_and_defaults(self, command, capsys):
        code, out, _ = run_cli([command, "--help"], capsys)
        assert code == 0
        assert "--config" in out
        assert "default" in out

    def test_missing_subcommand_is_usage_error(self, capsys):
        code, _, _ = run_cli([], capsys)
        assert code == 1


def small_pipeline(root: Path, capsys, seed="7"):
    """Tiny synth -> augment -> features -> train -> eval -> report chain."""
    steps = [
        ["synth", "--count", "6", "--seed", seed, "--out", str(root / "d"),
         "--width", "48", "--height", "48"],
        ["augment", "--manifest", str(root / "d/manifest.csv"), "--out",
         str(root / "aug"), "--mode", "grid", "--split", "0.8",
         "--split-seed", "3"],
        ["features", "--manifest", str(root / "aug/train.csv"), "--out",
         str(root / "ft/train.ft"), "--input-size", "16", "--channels", "2,4",
         "--clahe-tiles", "2,2", "--threads", "1"],
        ["features", "--manifest", str(root / "aug/test.csv"), "--out",
         str(root / "ft/test.ft"), "--input-size", "16", "--channels", "2,4",
         "--clahe-tiles", "2,2", "--threads", "1"],
        ["train", "--manifest", str(root / "aug/train.csv"), "--features",
         str(root / "ft/train.ft"), "--out", str(root / "run/model.akpt"),
         "--history", str(root / "run/history.csv"), "--epochs", "2",
         "--batch-size", "8", "--seed", "0", "--widths", "8,4",
         "--dropout", "0.5,0.5", "--threads", "1"],
        ["eval", "--checkpoint", str(root / "run/model.akpt"), "--features",
         str(root / "ft/test.ft"), "--manifest", str(root / "aug/test.csv"),
         "--out", str(root / "run/predictions.csv")],
        ["report", "--predictions", str(root / "run/predictions.csv"), "--out",
         str(root / "run/report.json"), "--scatter", str(root / "run/scatter.csv")],
    ]
    for step in steps:
        code, _, err = run_cli(step, capsys)
        assert code == 0, f"{step[0]} failed: {err}"


class TestPipeline:
    def test_grid_augment_counts(self, tmp_path, capsys):
        code, _, _ = run_cli(
            ["synth", "--count", "6", "--seed", "1", "--out", str(tmp_path / "d"),
             "--width", "40", "--height", "40"],
            capsys,
        )
        assert code == 0
        code, _, _ = run_cli(
            ["augment", "--manifest", str(tmp_path / "d/manifest.csv"),
             "--out", str(tmp_path / "aug"), "--mode", "grid"],
            capsys,
        )
        assert code == 0
        rows = (tmp_path / "aug/augmented.csv").read_text().splitlines()
        assert len(rows) - 1 == 6 * 25

    def test_batch_size_one_cites_batchnorm(self, tmp_path, capsys):
        small_pipeline(tmp_path, capsys)
        code, _, err = run_cli(
            ["train", "--manifest", str(tmp_path / "aug/train.csv"), "--features",
             str(tmp_path / "ft/train.ft"), "--out", str(tmp_path / "x.akpt"),
             "--batch-size", "1", "--epochs", "1"],
            capsys,
        )
        assert code == 1
        assert "BatchNorm" in err and "at least 2" in err

    def test_pipeline_byte_identical_across_invocations(self, tmp_path, capsys):
        small_pipeline(tmp_path / "a", capsys)
        small_pipeline(tmp_path / "b", capsys)
        for rel in ["d/manifest.csv", "aug/train.csv", "aug/test.csv",
                    "ft/train.ft", "ft/test.ft", "run/model.akpt",
                    "run/history.csv", "run/predictions.csv", "run/report.json",
                    "run/scatter.csv"]:
            a = (tmp_path / "a" / rel).read_bytes()
            b = (tmp_path / "b" / rel).read_bytes()
            assert a == b, f"{rel} differs between identical invocations"

    def test_corrupt_features_is_data_error(self, tmp_path, capsys):
        small_pipeline(tmp_path, capsys)
        bad = tmp_path / "bad.ft"
        bad.write_bytes(b"XXXX" + bytes(32))
        code, _, err = run_cli(
            ["train", "--manifest", str(tmp_path / "aug/train.csv"),
             "--features", str(bad), "--out", str(tmp_path / "x.akpt"),
             "--epochs", "1", "--batch-size", "8"],
            capsys,
        )
        assert code == 2
        assert "magic" in err

    def test_row_mismatch_is_data_error(self, tmp_path, capsys):
        small_pipeline(tmp_path, capsys)
        code, _, err = run_cli(
            ["eval", "--checkpoint", str(tmp_path / "run/model.akpt"),
             "--features", str(tmp_path / "ft/train.ft"),
             "--manifest", str(tmp_path / "aug/test.csv"),
             "--out", str(tmp_path / "p.csv")],
            capsys,
        )
        assert code == 2
        assert "match" in err

    def test_feature_import_round_trip(self, tmp_path, capsys):
        small_pipeline(tmp_path, capsys)
        code, _, _ = run_cli(
            ["features", "--import", str(tmp_path / "ft/train.ft"),
             "--out", str(tmp_path / "ft/imported.ft")],
            capsys,
        )
        assert code == 0
        assert (tmp_path / "ft/imported.ft").read_bytes() == (
            tmp_path / "ft/train.ft"
        ).read_bytes()

    def test_random_augment_mode(self, tmp_path, capsys):
        run_cli(["synth", "--count", "4", "--seed", "2", "--out",
                 str(tmp_path / "d"), "--width", "32", "--height", "32"], capsys)
        code, _, _ = run_cli(
            ["augment", "--manifest", str(tmp_path / "d/manifest.csv"),
             "--out", str(tmp_path / "r"), "--mode", "random", "--seed", "5",
             "--copies", "3"],
            capsys,
        )
        assert code == 0
        rows = (tmp_path / "r/augmented.csv").read_text().splitlines()
        assert len(rows) - 1 == 12

    def test_on_the_fly_training_smoke(self, tmp_path, capsys):
        run_cli(["synth", "--count", "8", "--seed", "3", "--out",
                 str(tmp_path / "d"), "--width", "32", "--height", "32"], capsys)
        code, _, err = run_cli(
            ["train", "--manifest", str(tmp_path / "d/manifest.csv"),
             "--augment-mode", "random-on-the-fly", "--input-size", "16",
             "--channels", "2,4", "--clahe-tiles", "2,2",
             "--out", str(tmp_path / "m.akpt"), "--epochs", "2",
             "--batch-size", "2", "--seed", "0", "--widths", "8,4",
             "--dropout", "0.0,0.0", "--val-fraction", "0.2", "--threads", "1"],
            capsys,
        )
        assert code == 0, err
        assert (tmp_path / "m.akpt").exists()


class TestConfigFile:
    def test_config_supplies_defaults(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"count": 3, "width": 32, "height": 32}))
        code, _, _ = run_cli(
            ["synth", "--seed", "1", "--out", str(tmp_path / "d"),
             "--config", str(cfg)],
            capsys,
        )
        assert code == 0
        rows = (tmp_path / "d/manifest.csv").read_text().splitlines()
        assert len(rows) - 1 == 3

    def test_explicit_flag_beats_config(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"count": 3, "width": 32, "height": 32}))
        run_cli(["synth", "--seed", "1", "--count", "5", "--out",
                 str(tmp_path / "d"), "--config", str(cfg)], capsys)
        rows = (tmp_path / "d/manifest.csv").read_text().splitlines()
        assert len(rows) - 1 == 5

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"no_such_flag": 1}))
        code, _, err = run_cli(
            ["synth", "--out", str(tmp_path / "d"), "--config", str(cfg)], capsys
        )
        assert code == 1
        assert "no_such_flag" in err


class TestSeedEnvFallback:
    def test_env_seed_used_when_flag_absent(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("ANGLEKIT_SEED", "11")
        run_cli(["synth", "--count", "3", "--out", str(tmp_path / "env"),
                 "--width", "32", "--height", "32"], capsys)
        monkeypatch.delenv("ANGLEKIT_SEED")
        run_cli(["synth", "--count", "3", "--seed", "11", "--out",
                 str(tmp_path / "flag"), "--width", "32", "--height", "32"], capsys)
        assert (tmp_path / "env/manifest.csv").read_bytes() == (
            tmp_path / "flag/manifest.csv"
        ).read_bytes()

    def test_flag_beats_env(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("ANGLEKIT_SEED", "11")
        run_cli(["synth", "--count", "3", "--seed", "4", "--out",
                 str(tmp_path / "a"), "--width", "32", "--height", "32"], capsys)
        monkeypatch.delenv("ANGLEKIT_SEED")
        run_cli(["synth", "--count", "3", "--seed", "4", "--out",
                 str(tmp_path / "b"), "--width", "32", "--height", "32"], capsys)
        assert (tmp_path / "a/manifest.csv").read_bytes() == (
            tmp_path / "b/manifest.csv"
        ).read_bytes()


def test_parser_builds_without_side_effects():
    parser = build_parser()
    assert parser.prog == "anglekit"


class TestNumericFailure:
    def test_divergent_training_exits_3(self, tmp_path, capsys):
        small_pipeline(tmp_path, capsys)
        code, _, err = run_cli(
            ["train", "--manifest", str(tmp_path / "aug/train.csv"), "--features",
             str(tmp_path / "ft/train.ft"), "--out", str(tmp_path / "n.akpt"),
             "--epochs", "3", "--batch-size", "8", "--alpha", "1e200",
             "--threads", "1"],
            capsys,
        )
        assert code == 3
        assert "numeric" in err


class TestAnnotationLabelsFeedTraining:
    def test_label_csv_flows_through_augment_and_features(self, tmp_path, capsys):
        # produce images + an annotation-style label CSV, then consume it
        run_cli(["synth", "--count", "4", "--seed", "9", "--out",
                 str(tmp_path / "imgs"), "--width", "32", "--height", "32"], capsys)
        from anglekit.dataset import load_manifest

        manifest = load_manifest(tmp_path / "imgs/manifest.csv")
        lines = ["image_id,x1,y1,x2,y2,theta_deg"]
        for s in manifest.samples:
            lines.append(f"{s.image_id},0.0,0.0,10.0,10.0,45.0")
        labels = tmp_path / "labels.csv"
        labels.write_text("\n".join(lines) + "\n")

        code, _, err = run_cli(
            ["augment", "--manifest", str(labels), "--images-dir",
             str(tmp_path / "imgs"), "--out", str(tmp_path / "aug"),
             "--mode", "grid"],
            capsys,
        )
        assert code == 0, err
        rows = (tmp_path / "aug/augmented.csv").read_text().splitlines()
        assert len(rows) - 1 == 100

        code, _, err = run_cli(
            ["features", "--manifest", str(labels), "--images-dir",
             str(tmp_path / "imgs"), "--out", str(tmp_path / "lab.ft"),
             "--input-size", "16", "--channels", "2,4", "--clahe-tiles", "2,2"],
            capsys,
        )
        assert code == 0, err

    def test_missing_image_for_label_row_is_data_error(self, tmp_path, capsys):
        labels = tmp_path / "labels.csv"
        labels.write_text("image_id,x1,y1,x2,y2,theta_deg\nghost,0,0,1,1,45.0\n")
        (tmp_path / "imgs").mkdir()
        code, _, err = run_cli(
            ["features", "--manifest", str(labels), "--images-dir",
             str(tmp_path / "imgs"), "--out", str(tmp_path / "x.ft")],
            capsys,
        )
        assert code == 2
        assert "ghost" in err
