import numpy as np

from csiloc.cli import run
from csiloc.codec import read_log_file
from csiloc.preprocess import read_dataset


def test_simulate_writes_logs_and_manifest(tmp_path, capsys):
    out = tmp_path / "data"
    code = run(["simulate", "--seed", "7", "--grids", "3", "--packets", "20",
                "--out", str(out)])
    assert code == 0
    assert sorted(p.name for p in out.iterdir()) == [
        "grid_1.csilog", "grid_2.csilog", "grid_3.csilog", "manifest.csv"]
    assert "3 grid logs" in capsys.readouterr().out
    assert len(read_log_file(out / "grid_2.csilog").packets) == 20


def test_decode_prints_summaries(tmp_path, capsys):
    out = tmp_path / "data"
    run(["simulate", "--seed", "1", "--grids", "1", "--packets", "3", "--out", str(out)])
    code = run(["decode", "--in", str(out / "grid_1.csilog"), "--filter"])
    assert code == 0
    text = capsys.readouterr().out
    assert "3 of 3 packets parsed" in text
    assert "dims=3x3x56" in text


def test_preprocess_split_round(tmp_path, capsys):
    out = tmp_path / "data"
    run(["simulate", "--seed", "2", "--grids", "3", "--packets", "20", "--out", str(out)])
    dataset = tmp_path / "set.csids"
    assert run(["preprocess", "--in", str(out), "--out", str(dataset)]) == 0
    assert len(read_dataset(dataset)) == 60

    assert run(["split", "--in", str(dataset), "--seed", "3"]) == 0
    sizes = [len(read_dataset(tmp_path / f"set.{name}.csids"))
             for name in ("train", "val", "test")]
    assert sizes == [45, 6, 9]


def test_train_evaluate_cycle(tmp_path, capsys):
    out = tmp_path / "data"
    run(["simulate", "--seed", "4", "--grids", "3", "--packets", "30", "--out", str(out)])
    dataset = tmp_path / "set.csids"
    run(["preprocess", "--in", str(out), "--out", str(dataset)])
    model = tmp_path / "model.bin"
    metrics = tmp_path / "metrics.csv"
    code = run(["train", "--task", "classification", "--data", str(dataset),
                "--epochs", "3", "--batch", "32", "--seed", "1",
                "--out", str(model), "--metrics", str(metrics)])
    assert code == 0
    assert model.exists() and metrics.exists()
    assert len(metrics.read_text().strip().splitlines()) == 1 + 3 + 1

    code = run(["evaluate", "--model", str(model), "--data", str(dataset)])
    assert code == 0
    text = capsys.readouterr().out
    assert "accuracy=" in text
    accuracy = float(text.rsplit("accuracy=", 1)[1].split()[0])
    assert accuracy >= 0.95


def test_gradcheck_command(capsys):
    assert run(["gradcheck", "--probes", "4", "--seed", "0"]) == 0
    text = capsys.readouterr().out
    assert "regression" in text and "classification" in text
    assert "passed" in text


def test_usage_errors_exit_1(capsys):
    assert run(["frobnicate"]) == 1
    assert run(["train", "--task", "unknown-task", "--data", "x", "--out", "y"]) == 1
    assert run(["simulate"]) == 1  # --out is required


def test_data_errors_exit_2(tmp_path, capsys):
    missing = tmp_path / "nope.csilog"
    assert run(["decode", "--in", str(missing)]) == 2
    bad = tmp_path / "bad.csilog"
    bad.write_bytes(b"NOTALOG!" + b"\x00" * 8)
    assert run(["decode", "--in", str(bad)]) == 2
    assert run(["preprocess", "--in", str(tmp_path / "empty"), "--out",
                str(tmp_path / "x.csids")]) == 2


def test_simulate_imbalance_flag(tmp_path):
    out = tmp_path / "data"
    code = run(["simulate", "--seed", "5", "--grids", "2",
                "--imbalance", "10,20,12", "--out", str(out)])
    assert code == 0
    counts = [len(read_log_file(out / f"grid_{label}.csilog").packets)
              for label in (1, 2)]
    assert all(10 <= c <= 20 for c in counts)
