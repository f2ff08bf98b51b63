"""End-to-end tests for the command-line interface: exit codes, output
formats, and the scan/synth/split/train/eval/bench/sweep-m/report pipeline."""

import json
import shutil
from types import SimpleNamespace

import pytest

from shuffle_histo.cli import ENV_DATA_ROOT, main
from shuffle_histo.data import MAGNIFICATIONS


@pytest.fixture(autouse=True)
def _no_ambient_data_root(monkeypatch):
    monkeypatch.delenv(ENV_DATA_ROOT, raising=False)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory, synth_root, tiny_cfg):
    """One trained run plus eval/bench artifacts for all four magnifications,
    produced entirely through the CLI."""
    base = tmp_path_factory.mktemp("cli")
    config = base / "config.json"
    config.write_text(
        json.dumps(
            {
                "model": tiny_cfg.to_dict(),
                "train": {"epochs": 1, "batch_size": 8, "learning_rate": 1e-3},
            }
        )
    )
    run_dir = base / "run"
    assert main(
        [
            "train", "--root", str(synth_root), "--config", str(config),
            "--run-dir", str(run_dir), "--seed", "3", "--magnification", "40",
        ]
    ) == 0
    checkpoint = run_dir / "best"
    for mag in MAGNIFICATIONS:
        assert main(
            [
                "eval", "--checkpoint", str(checkpoint), "--root", str(synth_root),
                "--magnification", str(mag),
                "--out", str(run_dir / f"eval_{mag}x.json"),
            ]
        ) == 0
        assert main(
            [
                "bench", "--checkpoint", str(checkpoint),
                "--out", str(run_dir / f"bench_{mag}x.json"),
            ]
        ) == 0
    return SimpleNamespace(
        base=base, config=config, run_dir=run_dir, checkpoint=checkpoint
    )


class TestExitCodes:
    def test_no_arguments_is_usage_error(self, capsys):
        assert main([]) == 2
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_subcommand(self):
        assert main(["bogus"]) == 2

    def test_unknown_flag(self):
        assert main(["scan", "--bad-flag"]) == 2

    def test_eval_without_checkpoint_is_domain_error(self, capsys):
        assert main(["eval"]) == 1
        assert "checkpoint" in capsys.readouterr().err

    def test_report_without_run_dir_is_domain_error(self, capsys):
        assert main(["report"]) == 1
        assert "--run-dir" in capsys.readouterr().err

    def test_scan_without_root_or_env(self, capsys):
        assert main(["scan"]) == 1
        assert ENV_DATA_ROOT in capsys.readouterr().err

    def test_synth_without_out(self, capsys):
        assert main(["synth"]) == 1
        assert "--out" in capsys.readouterr().err


class TestScan:
    def test_tallies_and_total_line(self, synth_root, capsys):
        assert main(["scan", "--root", str(synth_root)]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[-1] == "total 24 24 48"
        assert any(line.startswith("40x") for line in lines)
        assert any(line.startswith("400x") for line in lines)

    def test_env_var_supplies_root(self, synth_root, capsys, monkeypatch):
        monkeypatch.setenv(ENV_DATA_ROOT, str(synth_root))
        assert main(["scan"]) == 0
        assert capsys.readouterr().out.strip().splitlines()[-1] == "total 24 24 48"

    def test_save_manifest(self, synth_root, tmp_path, capsys):
        out = tmp_path / "manifest.csv"
        assert main(["scan", "--root", str(synth_root), "--save-manifest", str(out)]) == 0
        assert out.is_file()
        assert out.read_text().startswith("path,label,subtype")


class TestSynth:
    def test_writes_and_counts(self, tmp_path, capsys):
        out = tmp_path / "data"
        code = main(
            [
                "synth", "--out", str(out), "--n-per-class", "2",
                "--magnifications", "40", "--seed", "1",
            ]
        )
        assert code == 0
        assert capsys.readouterr().out.strip() == f"wrote 4 images to {out}"
        assert len(list(out.rglob("*.png"))) == 4

    def test_rejects_unknown_magnification(self, tmp_path):
        assert main(
            ["synth", "--out", str(tmp_path / "d"), "--magnifications", "60"]
        ) == 1


class TestSplit:
    def test_writes_three_files(self, synth_root, tmp_path, capsys):
        out = tmp_path / "splits"
        assert main(["split", "--root", str(synth_root), "--out", str(out), "--seed", "0"]) == 0
        line = capsys.readouterr().out.strip()
        sizes = [int(tok) for tok in line.split() if tok.isdigit()]
        assert sum(sizes) == 48
        for name in ("train.txt", "val.txt", "test.txt"):
            assert (out / name).is_file()

    def test_rejects_bad_ratios(self, synth_root, tmp_path):
        assert main(
            [
                "split", "--root", str(synth_root), "--out", str(tmp_path),
                "--ratios", "0.5,0.5",
            ]
        ) == 1


class TestTrain:
    def test_reports_best_accuracy_and_checkpoint(self, pipeline, synth_root, capsys):
        code = main(["train", "--root", str(pipeline.base / "nope")])
        assert code == 1  # bad root fails cleanly
        capsys.readouterr()
        run_dir = pipeline.base / "run2"
        code = main(
            [
                "train", "--root", str(synth_root), "--config", str(pipeline.config),
                "--run-dir", str(run_dir), "--seed", "3", "--magnification", "40",
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "best val accuracy" in out
        assert "checkpoint" in out and "best.weights" in out

    def test_artifacts_on_disk(self, pipeline):
        names = {p.name for p in pipeline.run_dir.iterdir()}
        assert {
            "config.json", "history.csv", "best.weights", "best.meta.json",
            "train.txt", "val.txt", "test.txt",
        } <= names


class TestEval:
    def test_text_output(self, pipeline, synth_root, capsys):
        code = main(
            [
                "eval", "--checkpoint", str(pipeline.checkpoint),
                "--root", str(synth_root), "--magnification", "40",
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "magnification 40x" in out
        assert "accuracy" in out and "counts" in out

    def test_json_output_parses(self, pipeline, synth_root, capsys):
        code = main(
            [
                "eval", "--checkpoint", str(pipeline.checkpoint),
                "--root", str(synth_root), "--format", "json",
            ]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert set(payload) >= {"accuracy", "precision", "recall", "f1", "counts"}
        assert payload["counts"]["tp"] + payload["counts"]["tn"] >= 0

    def test_split_file_restricts_records(self, pipeline, synth_root, capsys):
        code = main(
            [
                "eval", "--checkpoint", str(pipeline.checkpoint),
                "--root", str(synth_root),
                "--split-file", str(pipeline.run_dir / "val.txt"),
                "--format", "json",
            ]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        n_val = len((pipeline.run_dir / "val.txt").read_text().splitlines())
        counts = payload["counts"]
        assert counts["tp"] + counts["fp"] + counts["tn"] + counts["fn"] == n_val

    def test_out_writes_report_json(self, pipeline):
        stored = json.loads((pipeline.run_dir / "eval_40x.json").read_text())
        assert stored["magnification"] == 40

    def test_missing_checkpoint_is_domain_error(self, synth_root, tmp_path, capsys):
        code = main(
            [
                "eval", "--checkpoint", str(tmp_path / "missing"),
                "--root", str(synth_root),
            ]
        )
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_config_mismatch_is_domain_error(self, pipeline, synth_root, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        cfg = json.loads(pipeline.config.read_text())
        cfg["model"]["num_rdab_stages"] = cfg["model"]["num_rdab_stages"] + 1
        bad.write_text(json.dumps(cfg))
        code = main(
            [
                "eval", "--checkpoint", str(pipeline.checkpoint),
                "--root", str(synth_root), "--config", str(bad),
            ]
        )
        assert code == 1
        assert "error" in capsys.readouterr().err


class TestBench:
    def test_text_output(self, pipeline, capsys):
        assert main(["bench", "--checkpoint", str(pipeline.checkpoint)]) == 0
        out = capsys.readouterr().out
        assert "per-image" in out and "ms" in out

    def test_json_output_parses(self, pipeline, capsys):
        code = main(
            ["bench", "--checkpoint", str(pipeline.checkpoint), "--format", "json"]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["per_image_ms"] > 0
        assert payload["n_timed"] == 30

    def test_fresh_model_from_config(self, pipeline, capsys):
        code = main(["bench", "--config", str(pipeline.config), "--format", "csv"])
        assert code == 0
        assert capsys.readouterr().out.startswith("field,value")

    def test_too_few_timed_passes(self, pipeline, capsys):
        code = main(
            ["bench", "--checkpoint", str(pipeline.checkpoint), "--n-timed", "10"]
        )
        assert code == 1
        assert "n_timed" in capsys.readouterr().err


class TestSweepM:
    def test_prints_per_candidate_and_choice(self, synth_root, pipeline, capsys):
        code = main(
            [
                "sweep-m", "--root", str(synth_root), "--config", str(pipeline.config),
                "--candidates", "1", "--lr", "0", "--magnification", "40",
                "--seed", "0",
            ]
        )
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].startswith("m=1 val_accuracy=")
        assert lines[-1] == "chosen m=1"


class TestReport:
    def test_text_tables_to_stdout(self, pipeline, capsys):
        assert main(["report", "--run-dir", str(pipeline.run_dir)]) == 0
        out = capsys.readouterr().out
        assert "Accuracy (%)" in out
        assert "Test time (ms)" in out
        assert "DRDA-Net" in out
        assert "This model" in out

    def test_model_name_flag(self, pipeline, capsys):
        code = main(
            ["report", "--run-dir", str(pipeline.run_dir), "--model-name", "Tiny run"]
        )
        assert code == 0
        assert "Tiny run" in capsys.readouterr().out

    def test_json_files_parse(self, pipeline, tmp_path):
        out = tmp_path / "out"
        code = main(
            [
                "report", "--run-dir", str(pipeline.run_dir),
                "--format", "json", "--out", str(out),
            ]
        )
        assert code == 0
        mag = json.loads((out / "magnification_table.json").read_text())
        cmp = json.loads((out / "comparison_table.json").read_text())
        assert mag["columns"] == ["40x", "100x", "200x", "400x"]
        assert any(m["model"] == "This model" for m in cmp["models"])

    def test_emission_is_idempotent(self, pipeline, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(
                [
                    "report", "--run-dir", str(pipeline.run_dir),
                    "--format", "csv", "--out", str(out),
                ]
            ) == 0
            outs.append(out)
        for fname in ("magnification_table.csv", "comparison_table.csv"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()

    def test_plots(self, pipeline, tmp_path):
        out = tmp_path / "plots"
        code = main(
            [
                "report", "--run-dir", str(pipeline.run_dir),
                "--out", str(out), "--plots",
            ]
        )
        assert code == 0
        assert (out / "metric_bars.png").stat().st_size > 1000
        assert (out / "training_curves.png").stat().st_size > 1000

    def test_partial_reports_skip_magnification_table(self, pipeline, tmp_path, capsys):
        partial = tmp_path / "partial"
        partial.mkdir()
        shutil.copy(pipeline.run_dir / "eval_40x.json", partial / "eval_40x.json")
        assert main(["report", "--run-dir", str(partial)]) == 0
        captured = capsys.readouterr()
        assert "Accuracy (%)" not in captured.out
        assert "Acc" in captured.out
        assert "skipped" in captured.err

    def test_empty_run_dir_is_domain_error(self, tmp_path, capsys):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main(["report", "--run-dir", str(empty)]) == 1
        assert "nothing to report" in capsys.readouterr().err

    def test_missing_run_dir_is_domain_error(self, tmp_path):
        assert main(["report", "--run-dir", str(tmp_path / "gone")]) == 1
