import numpy as np
import pytest

from phasenav import quat
from phasenav.channel import write_labeled_dataset
from phasenav.cli import main
from phasenav.evaluation import TrajectoryRecord
from phasenav.scenario import load_scenario
from phasenav.util import csv_rows


def run(argv):
    return main(argv)


def test_version_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["--version"])
    assert exc.value.code == 0
    assert "phasenav" in capsys.readouterr().out


def test_no_command_is_usage_error(capsys):
    assert run([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_command_exits_one():
    with pytest.raises(SystemExit) as exc:
        run(["frobnicate"])
    assert exc.value.code == 1


def test_missing_required_flag_exits_one():
    with pytest.raises(SystemExit) as exc:
        run(["train"])
    assert exc.value.code == 1


def test_runtime_failure_exits_two(tmp_path, capsys):
    assert run(["evaluate", "--est", str(tmp_path / "missing.csv"),
                "--gt", str(tmp_path / "missing.csv")]) == 2
    assert "phasenav:" in capsys.readouterr().err


def test_init_config_round_trip(tmp_path):
    assert run(["init-config", "--out", str(tmp_path), "--seed", "3"]) == 0
    config = load_scenario(tmp_path / "scenario.yaml")
    assert config.rng_seed == 3
    assert [t.id for t in config.trp_list] == ["TRP-1", "TRP-2", "TRP-3"]


def test_range_outputs_and_byte_determinism(tmp_path, capsys):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert run(["range", "--seed", "7", "--out", str(out_a)]) == 0
    first = capsys.readouterr().out
    assert "TRP-1_m " in first and "TRP-1_true_m " in first
    assert run(["range", "--seed", "7", "--out", str(out_b)]) == 0
    assert (out_a / "ranges.csv").read_bytes() == (out_b / "ranges.csv").read_bytes()
    rows = csv_rows(out_a / "ranges.csv")
    assert rows[0] == ["trp_id", "k", "lambda_v_m", "dphi_rad", "N", "d_m"]
    assert len(rows) == 1 + 3 * 3  # three cascade levels per site


def test_range_csv_format(tmp_path, capsys):
    assert run(["range", "--seed", "1", "--out", str(tmp_path), "--format", "csv"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2
    assert lines[0].split(",")[0] == "TRP-1_m"


def test_coverage_command(tmp_path, capsys):
    assert run(["coverage", "--out", str(tmp_path), "--cell-size", "10",
                "--region", "90", "80", "160", "160"]) == 0
    out = capsys.readouterr().out
    assert "fraction_positionable 1.0" in out
    rows = csv_rows(tmp_path / "coverage.csv")
    assert rows[0] == ["x", "y", "los_count"]
    assert len(rows) == 1 + 7 * 8


def test_simulate_command(tmp_path, capsys):
    assert run(["simulate", "--samples", "4", "--out", str(tmp_path), "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "samples 4" in out
    rows = csv_rows(tmp_path / "dataset.csv")
    assert len(rows) == 4
    assert all(r[0] in ("LOS", "NLOS") for r in rows)


def test_train_then_classify(tmp_path, capsys):
    rng = np.random.default_rng(0)
    n, length = 24, 3276
    labels = np.tile([True, False], n // 2)
    mags = rng.uniform(0.0, 1.0, size=(n, length))
    mags[labels] += 1.0  # separable-ish; speed matters here, not accuracy
    data = tmp_path / "data.csv"
    write_labeled_dataset(data, labels, np.zeros(n), mags)

    out = tmp_path / "run"
    # seed 1: the held-out split contains both classes at this dataset size
    assert run(["train", "--data", str(data), "--epochs", "1", "--batch-size", "8",
                "--out", str(out), "--seed", "1"]) == 0
    text = capsys.readouterr().out
    assert "epochs_run 1" in text
    assert (out / "model.ckpt").exists()
    assert csv_rows(out / "history.csv")[0][0] == "epoch"

    assert run(["classify", "--model", str(out / "model.ckpt"),
                "--data", str(data)]) == 0
    assert "samples 24" in capsys.readouterr().out


def test_localize_command(tmp_path, capsys):
    assert run(["localize", "--epochs", "2", "--seed", "4", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "epochs 2" in out
    rows = csv_rows(tmp_path / "fixes.csv")
    assert len(rows) == 1 + 2


def test_evaluate_identical_trajectories(tmp_path, capsys):
    times = np.arange(5) * 0.1
    positions = np.column_stack([times, times * 2.0, np.ones_like(times)])
    quaternions = np.tile(quat.identity(), (5, 1))
    record = TrajectoryRecord(times=times, positions=positions, quaternions=quaternions)
    path = tmp_path / "traj.csv"
    record.to_csv(path)
    assert run(["evaluate", "--est", str(path), "--gt", str(path)]) == 0
    out = capsys.readouterr().out
    assert "ate_m 0.0" in out
    assert "rpe_trans_m 0.0" in out


def test_study_umi_manifest(tmp_path, capsys):
    assert run(["study", "umi", "--iterations", "2", "--out", str(tmp_path),
                "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "high_accuracy_fraction" in out
    manifest = (tmp_path / "manifest.txt").read_text().splitlines()
    assert manifest[0] == "study umi"
    assert any(line.startswith("config_hash ") for line in manifest)
    assert (tmp_path / "ranges_TRP-1.csv").exists()
    first = (tmp_path / "ranges_TRP-1.csv").read_text().splitlines()
    assert first[0].startswith("# config_hash=")
    assert first[1] == "distance_m,is_los"
