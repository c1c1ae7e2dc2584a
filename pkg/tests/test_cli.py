import filecmp
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from conftest import write_public_corpus
from utgpose.harness import datasets as ds
from utgpose.harness.cli import main

TINY = ["--cir-per-pose", "6", "--imu-per-pose", "160"]


def run(*argv):
    return main([str(a) for a in argv])


def tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Tiny dataset plus one-epoch models, shared by the command tests."""
    d = tmp_path_factory.mktemp("cli")
    assert run("gen", "--seed", 7, "--out-dir", d, *TINY) == 0
    assert run("train-los", "--out-dir", d, "--epochs", 1) == 0
    assert run("train-pose", "--out-dir", d, "--epochs", 1, "--stride", 6) == 0
    return d


def rerun_identical(tmp_path, base: Path, argv: list, seed=3):
    """Run a command twice in copies of ``base``; both output trees must match byte for byte."""
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        shutil.copytree(base, d)
        assert run(*argv, "--out-dir", d, "--seed", seed) == 0
        outs.append(tree(d))
    assert outs[0] == outs[1]
    return tmp_path / "a"


def test_gen_twice_identical(tmp_path):
    for name in ("a", "b"):
        assert run("gen", "--seed", 7, "--out-dir", tmp_path / name, *TINY) == 0
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    assert tree(tmp_path / "a") == tree(tmp_path / "b")


def test_gen_seed_matters(tmp_path):
    run("gen", "--seed", 1, "--out-dir", tmp_path / "a", *TINY)
    run("gen", "--seed", 2, "--out-dir", tmp_path / "b", *TINY)
    assert (tmp_path / "a" / ds.CIR_FILE).read_bytes() != (tmp_path / "b" / ds.CIR_FILE).read_bytes()


def test_eval_before_training(tmp_path, capsys):
    run("gen", "--out-dir", tmp_path, *TINY)
    assert run("eval", "--out-dir", tmp_path) == 1
    assert "missing model" in capsys.readouterr().err


def test_usage_errors(tmp_path, capsys):
    assert run("bogus") == 1
    assert run("gen", "--no-such-flag") == 1
    assert run() == 1
    assert run("gen", "--seed", "abc") == 1
    assert "usage" in capsys.readouterr().err


def test_io_error_exit_2(tmp_path):
    assert run("import", "--input", tmp_path / "missing.csv", "--out-dir", tmp_path) == 2
    assert run("eval", "--data", tmp_path / "nowhere", "--models", tmp_path / "nowhere",
               "--out-dir", tmp_path) == 1
    assert run("train-los", "--data", tmp_path / "nowhere", "--out-dir", tmp_path) == 2


def test_config_error_exit_1(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[channel]\nbogus = 1\n")
    assert run("gen", "--config", cfg, "--out-dir", tmp_path, *TINY) == 1


def test_train_los_deterministic(tmp_path, workdir):
    d = rerun_identical(tmp_path, workdir, ["train-los", "--epochs", 1])
    assert (d / "los_classifier.json").exists() and (d / "los_classifier_loss.csv").exists()


def test_train_pose_deterministic(tmp_path, workdir):
    d = rerun_identical(tmp_path, workdir, ["train-pose", "--epochs", 1, "--stride", 6])
    assert (d / "pose_los.bin").exists() and (d / "pose_nlos_loss.csv").exists()


def test_eval_deterministic(tmp_path, workdir):
    d = rerun_identical(tmp_path, workdir, ["eval", "--outlier-rate", 0.1])
    report = json.loads((d / "eval.json").read_text())
    assert set(report["counts"]) == {"LOS_HAND", "NLOS_HAND", "FRONT", "BACK"}


def test_walk_jsonl_and_summary(tmp_path, workdir, capsys):
    scenario = tmp_path / "s.toml"
    scenario.write_text('duration_ms = 3000.0\npose_schedule = [[0, "LOS_HAND"], [2000, "BACK"]]\n')
    out = tmp_path / "w"
    assert run("walk", "--scenario", scenario, "--models", workdir, "--out-dir", out) == 0
    lines = (out / "estimates.jsonl").read_text().splitlines()
    assert len(lines) == 9
    rec = json.loads(lines[0])
    assert {"t_ms", "raw_p_los", "smoothed_p_los", "los_label", "pose", "distance_m"} <= set(rec)
    summary = json.loads((out / "walk_summary.json").read_text())
    assert summary["estimates"] == 9 and summary["suppressed"] == 6
    assert "pose_accuracy" in capsys.readouterr().out


def test_walk_deterministic(tmp_path, workdir):
    scenario = tmp_path / "s.toml"
    scenario.write_text('duration_ms = 2500.0\npose_schedule = [[0, "FRONT"]]\n')
    rerun_identical(tmp_path, workdir, ["walk", "--scenario", scenario])
    rerun_identical(tmp_path / "oracle", workdir, ["walk", "--oracle"])


def test_report_deterministic(tmp_path, workdir):
    d = rerun_identical(tmp_path, workdir, ["report", "--trials", 1])
    for name in ("report.json", "report.txt", "accuracy.csv", "transition_delay.csv", "latency.csv"):
        assert (d / name).exists()
    assert "223.4" in (d / "latency.csv").read_text()


def test_import_deterministic(tmp_path):
    corpus = tmp_path / "corpus.csv"
    write_public_corpus(corpus, ds.generate_cir_dataset(2, seed=0), blank_every=3)
    base = tmp_path / "base"
    base.mkdir()
    d = rerun_identical(tmp_path, base, ["import", "--input", corpus])
    report = json.loads((d / "import_report.json").read_text())
    assert report["n_imported"] == 8 and report["n_healed"] == 3


def test_train_with_imported_corpus(tmp_path, workdir):
    corpus = tmp_path / "corpus.csv"
    write_public_corpus(corpus, ds.generate_cir_dataset(2, seed=9))
    assert run("import", "--input", corpus, "--out-dir", tmp_path) == 0
    out = tmp_path / "m"
    assert run("train-los", "--data", workdir, "--corpus", tmp_path / "imported_cir.csv",
               "--epochs", 1, "--out-dir", out) == 0


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "utgpose.harness.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("gen", "import", "train-los", "train-pose", "eval", "walk", "report"):
        assert cmd in proc.stdout
