import csv
import os
import subprocess
import sys

import numpy as np
import pytest

from ppan import cli
from ppan.experiments import (
    TRADEOFF_COLUMNS, ConfigError, CsvFormatError, ExperimentConfig, build_model, compare,
    default_output_dir, load_config, read_tradeoff_csv, run_experiment,
)
from ppan.oracle import ScalarGaussParams, scalar_ud_optimum


def write(path, text):
    path.write_text(text)
    return path


def hand_csv(path, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRADEOFF_COLUMNS)
        for delta, leak, orc, status in rows:
            writer.writerow([delta, 10, delta, leak, orc, "", 0, status])
    return path


# ----------------------------------------------------------------- config

def test_load_config_and_overrides(tmp_path):
    path = write(tmp_path / "a.ini", "[experiment]\nexperiment = scalar-ud\nepochs = 3\ngrid = 0.2, 0.4\n")
    cfg = load_config(path, {"lam": "5"})
    tc = cfg.train_config()
    assert (tc.epochs, tc.lam, tc.minibatch_size) == (3, 5.0, 200)
    assert cfg.grid() == (0.2, 0.4)
    assert cfg.architecture().hidden == (5, 5)


def test_default_grid_has_twenty_points():
    for name in ("scalar-ud", "scalar-fd", "vector-ud", "rate-distortion", "symmetric-pair"):
        assert len(ExperimentConfig.from_mapping(name).grid()) == 20


@pytest.mark.parametrize("body, fragment", [
    ("experiment = scalar-ud\nfoo = 1\n", "line 3, field 'foo'"),
    ("experiment = scalar-ud\n\nepochs = zero\n", "line 4, field 'epochs'"),
    ("experiment = scalar-ud\ngrid_linspace = 0, 1\n", "line 3, field 'grid_linspace'"),
    ("experiment = scalar-ud\ngrid = 0.1, -0.2\n", "line 3, field 'grid'"),
    ("experiment = nope\n", "field 'experiment'"),
    ("epochs = 3\n", "field 'experiment': missing"),
    ("experiment = scalar-ud\nrho = 1.5\n", "model parameters"),
    ("experiment = scalar-ud\nepochs = 0\n", "training settings"),
    ("experiment = mnist-toy\n", "field 'images'"),
])
def test_config_diagnostics(tmp_path, body, fragment):
    path = write(tmp_path / "bad.ini", "[experiment]\n" + body)
    with pytest.raises(ConfigError, match=fragment):
        load_config(path)


def test_config_structure_errors(tmp_path):
    with pytest.raises(ConfigError, match="exactly one"):
        load_config(write(tmp_path / "x.ini", "[a]\nb = 1\n[c]\nd = 2\n"))
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.ini")


def test_output_root_environment(monkeypatch):
    cfg = ExperimentConfig.from_mapping("scalar-ud")
    monkeypatch.setenv("PPAN_OUTPUT_ROOT", "/tmp/somewhere")
    assert str(default_output_dir(cfg)) == "/tmp/somewhere/scalar-ud"
    monkeypatch.delenv("PPAN_OUTPUT_ROOT")
    assert str(default_output_dir(cfg)) == os.path.join("ppan-output", "scalar-ud")


def test_build_model_kinds():
    assert build_model(ExperimentConfig.from_mapping("scalar-fd")).dims == (2, 1, 1)
    assert build_model(ExperimentConfig.from_mapping("rate-distortion")).dims == (5, 5, 5)
    assert build_model(ExperimentConfig.from_mapping("symmetric-pair")).is_finite


# ---------------------------------------------------------------- oracle runs

def test_oracle_only_run_has_zero_gaps(tmp_path):
    cfg = ExperimentConfig.from_mapping("oracle-only", {"curve": "scalar-ud", "grid": "0.1, 0.5, 0.9"})
    points = run_experiment(cfg, tmp_path)
    expected = [scalar_ud_optimum(ScalarGaussParams(), d).leakage for d in (0.1, 0.5, 0.9)]
    assert [p.leakage_nats for p in points] == pytest.approx(expected, abs=1e-12)
    report = compare(tmp_path / "tradeoff.csv")
    assert report.passed and report.max_gap == 0.0 and report.mean_gap == 0.0


# ------------------------------------------------------------------- compare

def test_compare_statistics_on_hand_csv(tmp_path):
    path = hand_csv(tmp_path / "t.csv", [
        (0.1, 1.05, 1.0, "ok"), (0.3, 0.45, 0.5, "ok"), (0.5, 0.2, 0.2, "ok"),
        (0.7, 9.0, 0.1, "failed: non-finite"), (0.9, 0.3, "", "ok"),
    ])
    report = compare(path)
    assert report.deltas == [0.1, 0.3, 0.5]
    assert report.gaps == pytest.approx([0.05, -0.05, 0.0])
    assert report.max_gap == pytest.approx(0.05)
    assert report.mean_gap == pytest.approx(0.1 / 3)
    assert report.passed


def test_compare_flags_large_gap(tmp_path):
    path = hand_csv(tmp_path / "t.csv", [(0.1, 1.0, 1.0, "ok"), (0.5, 0.6, 0.4, "ok")])
    report = compare(path, tolerance=0.1)
    assert not report.passed and report.failures == [0.5]
    assert "FAIL at delta_target 0.5" in report.render()
    assert compare(path, tolerance=0.25).passed


def test_compare_without_rows_fails(tmp_path):
    report = compare(hand_csv(tmp_path / "t.csv", [(0.1, 1.0, "", "ok")]))
    assert not report.passed and "no rows" in report.render()


def test_missing_columns_raise(tmp_path):
    path = write(tmp_path / "bad.csv", "delta_target,leakage_nats\n0.1,0.2\n")
    with pytest.raises(CsvFormatError, match="oracle_leakage_nats"):
        read_tradeoff_csv(path)
    path = hand_csv(tmp_path / "nan.csv", [(0.1, "abc", 1.0, "ok")])
    with pytest.raises(CsvFormatError, match="line 2"):
        compare(path)


# ----------------------------------------------------------------------- CLI

def test_cli_oracle_compare_and_datagen(tmp_path, capsys):
    assert cli.main(["oracle", "scalar-fd", "--grid", "0.1,0.4", "--output-dir", str(tmp_path)]) == 0
    assert cli.main(["compare", str(tmp_path / "tradeoff.csv")]) == 0
    assert "PASS" in capsys.readouterr().out
    out = tmp_path / "d" / "s.csv"
    assert cli.main(["datagen", "symmetric-pair", "-n", "7", "--output", str(out), "--set", "m=3"]) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["w0", "x0", "y0"] and len(rows) == 8
    assert all(0 <= int(v) < 3 for r in rows[1:] for v in r)


def test_cli_exit_codes(tmp_path, capsys):
    bad = write(tmp_path / "bad.ini", "[experiment]\nexperiment = scalar-ud\nfoo = 1\n")
    assert cli.main(["run", str(bad)]) == cli.EXIT_CONFIG
    assert "line 3, field 'foo'" in capsys.readouterr().err
    assert cli.main(["compare", str(tmp_path / "none.csv")]) == cli.EXIT_FAIL
    failing = hand_csv(tmp_path / "f.csv", [(0.5, 0.6, 0.4, "ok")])
    assert cli.main(["compare", str(failing)]) == cli.EXIT_FAIL
    assert cli.main(["oracle", "scalar-ud", "--set", "rho"]) == cli.EXIT_CONFIG
    assert cli.main(["datagen", "scalar-ud", "-n", "0", "--output", str(tmp_path / "x.csv")]) == cli.EXIT_CONFIG
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])


def test_cli_run_reports_diverged_points(tmp_path, monkeypatch):
    from ppan import trainer

    def boom(*args, **kwargs):
        raise trainer.TrainingDivergedError("non-finite objective")

    monkeypatch.setattr(trainer, "train", boom)
    cfg = write(tmp_path / "c.ini", "[experiment]\nexperiment = scalar-ud\ngrid = 0.3\n")
    assert cli.main(["run", str(cfg), "--output-dir", str(tmp_path / "o")]) == cli.EXIT_DIVERGED
    rows = read_tradeoff_csv(tmp_path / "o" / "tradeoff.csv")
    assert rows[0]["status"].startswith("failed")


def test_module_entry_point(tmp_path):
    result = subprocess.run([sys.executable, "-m", "ppan", "oracle", "rate-distortion", "--linspace", "0.25,2,3",
                             "--output-dir", str(tmp_path)], capture_output=True, text=True)
    assert result.returncode == 0, result.stderr
    assert len(read_tradeoff_csv(tmp_path / "tradeoff.csv")) == 3


# --------------------------------------------------------------- determinism

def test_reruns_are_byte_identical(tmp_path):
    settings = {"grid": "0.1, 0.4", "epochs": "2", "n_train": "400", "n_test": "200"}
    outputs = []
    for name, workers in (("a", 1), ("b", 1), ("c", 2)):
        cfg = ExperimentConfig.from_mapping("symmetric-pair", settings)
        run_experiment(cfg, tmp_path / name, workers=workers)
        outputs.append([(tmp_path / name / f).read_bytes() for f in ("tradeoff.csv", "history.csv")])
    assert outputs[0] == outputs[1] == outputs[2]
    other = ExperimentConfig.from_mapping("symmetric-pair", dict(settings, seed="1"))
    run_experiment(other, tmp_path / "d")
    assert (tmp_path / "d" / "tradeoff.csv").read_bytes() != outputs[0][0]
