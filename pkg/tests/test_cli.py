import csv
import json
import os
import subprocess
import sys

import pytest
import yaml

from cumlr import cli, csvio

QUICK = ["--set", "dataset.train_size=512", "--set", "training.epochs=2", "--set", "training.repeats=2",
         "--set", "sweep.points_per_decade=2"]


def rows(path):
    with open(path, newline="") as fh:
        r = list(csv.reader(fh))
    return r[0], r[1:]


def test_train_writes_increasing_curve(tmp_path, capsys):
    assert cli.main(["train", "--out", str(tmp_path)] + QUICK) == 0
    header, body = rows(tmp_path / "curve.csv")
    assert header == ["examples_seen", "lr", "train_loss"]
    seen = [int(r[0]) for r in body]
    assert seen == sorted(set(seen)) and seen[-1] == 1024
    assert "final_eval_loss=" in capsys.readouterr().out
    meta = json.loads((tmp_path / "curve.csv.meta.json").read_text())
    assert meta["config"]["training"]["epochs"] == 2
    assert meta["toolkit_version"] and meta["kernel_backend"] in ("python", "cython")


def test_unknown_key_rejected_before_work(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"training": {"epochz": 3}}))
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "epochz" in capsys.readouterr().err
    assert not (tmp_path / "curve.csv").exists()


def test_diverging_rate_exits_3(tmp_path):
    assert cli.main(["train", "--out", str(tmp_path), "--set", "schedule.eta0=100"]) == 3
    _, body = rows(tmp_path / "curve.csv")
    # truncated: a full run would have 4 epochs of 32 batches
    assert 0 < len(body) < 128
    assert json.loads((tmp_path / "curve.csv.meta.json").read_text())["diverged"] is True


def test_print_config(capsys):
    assert cli.main(["sweep", "--print-config", "--set", "optimizer.kind=adam"]) == 0
    cfg = yaml.safe_load(capsys.readouterr().out)
    assert cfg["optimizer"]["kind"] == "adam"
    assert cfg["sweep"]["lo"] == 1e-5 and cfg["sweep"]["hi"] == 0.1


def test_sweep_rows(tmp_path, capsys):
    assert cli.main(["sweep", "--out", str(tmp_path), "--set", "sweep.refine=false"] + QUICK) == 0
    header, body = rows(tmp_path / "sweep.csv")
    assert header == ["lr", "mean_eval_loss", "std_eval_loss", "repeats", "diverged_count"]
    assert len(body) == 7  # 1e-3..1 at two points per decade
    lrs = [float(r[0]) for r in body]
    assert lrs == sorted(lrs)
    assert all(r[3] == "2" and 0 <= int(r[4]) <= 2 for r in body)
    assert "best_lr=" in capsys.readouterr().out


def test_sweep_refined_threads(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["sweep", "--out", str(a)] + QUICK) == 0
    assert cli.main(["sweep", "--out", str(b), "--threads", "3"] + QUICK) == 0
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
    assert len(rows(a / "sweep.csv")[1]) > 7


def test_sweep_all_diverge_exits_3(tmp_path, capsys):
    args = ["sweep", "--out", str(tmp_path), "--set", "sweep.lo=1000", "--set", "sweep.hi=10000"] + QUICK
    assert cli.main(args) == 3
    assert "no convergent rate" in capsys.readouterr().out
    _, body = rows(tmp_path / "sweep.csv")
    assert all(r[1] == "inf" and r[4] == "2" for r in body)


def test_kappa_worked_example_and_append(tmp_path, capsys):
    base = ["kappa", "--best-lr", "0.000423", "--out", str(tmp_path),
            "--set", "dataset.train_size=30000", "--set", "training.epochs=13"]
    assert cli.main(base) == 0
    out = capsys.readouterr().out
    assert "kappa=164.97" in out
    assert cli.main(base[:2] + ["0.00045"] + base[3:-1] + ["training.epochs=10"]) == 0
    header, body = rows(tmp_path / "scaling.csv")
    assert header == ["total_data", "epochs", "train_size", "best_lr", "kappa"]
    assert [r[0] for r in body] == ["390000", "300000"]
    assert float(body[0][4]) == pytest.approx(164.97)
    assert float(body[1][4]) == pytest.approx(135.0)
    meta = json.loads((tmp_path / "scaling.csv.meta.json").read_text())
    assert len(meta["entries"]) == 2


def test_kappa_from_sweep(tmp_path):
    assert cli.main(["kappa", "--out", str(tmp_path)] + QUICK) == 0
    _, body = rows(tmp_path / "scaling.csv")
    assert len(body) == 1 and float(body[0][4]) > 0


def test_kappa_non_constant_shape_is_misuse(tmp_path, capsys):
    assert cli.main(["kappa", "--best-lr", "0.1", "--out", str(tmp_path),
                     "--set", "schedule.kind=halving_decay"]) == 2
    assert "constant" in capsys.readouterr().err
    assert not (tmp_path / "scaling.csv").exists()


@pytest.mark.parametrize("shape,epochs,expected", [("halving_decay", 13, 0.00275), ("halving_decay", 5, 0.00284),
                                                   ("constant", 13, 0.000423)])
def test_solve(tmp_path, capsys, shape, epochs, expected):
    assert cli.main(["solve", "--kappa", "165", "--shape", shape, "-N", "30000", "-E", str(epochs),
                     "--out", str(tmp_path)]) == 0
    _, body = rows(tmp_path / "predict.csv")
    assert body[0][0] == shape and body[0][1] == str(epochs)
    assert float(body[0][2]) == pytest.approx(expected, abs=5e-6)
    assert "eta0=" in capsys.readouterr().out


def test_solve_custom_shape(tmp_path):
    assert cli.main(["solve", "--kappa", "30", "--shape", "custom", "--multipliers", "1", "0.5", "0.5",
                     "-N", "10", "-E", "3", "--out", str(tmp_path)]) == 0
    assert float(rows(tmp_path / "predict.csv")[1][0][2]) == pytest.approx(1.5)
    assert cli.main(["solve", "--kappa", "30", "--shape", "custom", "--multipliers", "0", "0",
                     "-N", "10", "-E", "2", "--out", str(tmp_path)]) == 2


def test_repro_unknown_scenario(capsys):
    assert cli.main(["repro", "fig99"]) == 2
    err = capsys.readouterr().err
    assert "decay_predict" in err and "inverse_prop_sgd" in err


def test_missing_mnist_exits_2_with_instructions(tmp_path, capsys):
    args = ["train", "--out", str(tmp_path), "--set", "dataset.kind=mnist",
            "--set", f"dataset.path={tmp_path / 'nowhere'}", "--set", "model.layer_sizes=[784, 256, 10]"]
    assert cli.main(args) == 2
    err = capsys.readouterr().err
    assert "train-images-idx3-ubyte" in err and "CUMLR_DATA_DIR" in err


def test_usage_errors_exit_2(capsys):
    assert cli.main([]) == 2
    assert cli.main(["solve", "--kappa", "1"]) == 2
    assert cli.main(["train", "--set", "noequals"]) == 2


def test_console_script_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "cumlr.cli", "solve", "--kappa", "165", "-N", "30000", "-E", "13",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 0
    assert "0.00275" in out.stdout


def test_atomic_write_leaves_no_temp_files(tmp_path):
    p = csvio.write_csv(tmp_path / "x" / "sweep.csv", "sweep", [(0.1, 0.5, 0.0, 3, 0)], csvio.provenance({}))
    assert sorted(os.listdir(p.parent)) == ["sweep.csv", "sweep.csv.meta.json"]


def test_atomic_write_failure_keeps_old_file(tmp_path, monkeypatch):
    p = csvio.write_csv(tmp_path / "sweep.csv", "sweep", [(0.1, 0.5, 0.0, 3, 0)], csvio.provenance({}))
    before = p.read_bytes()

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(csvio.os, "replace", boom)
    with pytest.raises(OSError):
        csvio.write_csv(p, "sweep", [(0.2, 0.4, 0.0, 3, 0)], csvio.provenance({}))
    assert p.read_bytes() == before
    assert sorted(os.listdir(tmp_path)) == ["sweep.csv", "sweep.csv.meta.json"]


def test_csv_schema_enforced(tmp_path):
    with pytest.raises(ValueError):
        csvio.write_csv(tmp_path / "s.csv", "sweep", [(0.1, 0.5)], {})
    (tmp_path / "scaling.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        csvio.append_csv(tmp_path / "scaling.csv", "scaling", [(1, 1, 1, 0.1, 0.1)], {})


def test_floats_round_trip_exactly(tmp_path):
    v = 0.1 + 0.2
    p = csvio.write_csv(tmp_path / "s.csv", "sweep", [(v, float("inf"), float("nan"), 3, 3)], {})
    _, body = rows(p)
    assert float(body[0][0]) == v and body[0][1] == "inf" and body[0][2] == "nan"


def test_repro_decay_predict_desk(tmp_path, capsys):
    assert cli.main(["repro", "decay_predict", "--scale", "desk", "--out", str(tmp_path)]) == 0
    header, body = rows(tmp_path / "decay_predict" / "predict.csv")
    assert header == ["schedule_kind", "epochs", "predicted_eta0", "swept_eta0", "ratio"]
    assert [(r[0], r[1]) for r in body] == [("halving_decay", "4"), ("halving_decay", "8")]
    for r in body:
        assert float(r[3]) / float(r[2]) == pytest.approx(float(r[4]))
    out = capsys.readouterr().out
    assert "PASS" in out and "ALL PASS" in out


def test_repro_inverse_prop_sgd_desk(tmp_path, capsys):
    assert cli.main(["repro", "inverse_prop_sgd", "--out", str(tmp_path), "--threads", "2"]) == 0
    _, body = rows(tmp_path / "inverse_prop_sgd" / "scaling.csv")
    assert [int(r[1]) for r in body] == [2, 4, 8, 16]
    assert all(int(r[0]) == 2048 * int(r[1]) for r in body)
    assert "loglog_slope" in capsys.readouterr().out


def test_repro_reports_threshold_failure(tmp_path, monkeypatch, capsys):
    import cumlr.repro
    monkeypatch.setattr(cumlr.repro, "KAPPA_CV_MAX", -1.0)
    assert cli.main(["repro", "kappa_constancy", "--out", str(tmp_path)]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_repro_full_scale_without_mnist(tmp_path, capsys):
    assert cli.main(["repro", "inverse_prop_adam", "--scale", "full", "--out", str(tmp_path),
                     "--data-dir", str(tmp_path / "none")]) == 2
    assert "MNIST" in capsys.readouterr().err
