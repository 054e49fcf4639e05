import numpy as np
import pytest

from hoft import __version__, experiments
from hoft.checkpoint import read_checkpoint
from hoft.cli import main
from hoft.densemat import Rng
from hoft.quant import quantize
from hoft.train import make_task


def csv_parts(path):
    lines = path.read_text().splitlines()
    meta = dict(line[2:].split("=", 1) for line in lines if line.startswith("# "))
    body = [line for line in lines if not line.startswith("#")]
    return meta, body[0], body[1:]


def test_figure1_csv_and_determinism(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["figure1", "--dims", "32,64", "--ranks", "1,2,4", "--trials", "2", "--seed", "5"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    meta, header, rows = csv_parts(a)
    assert meta["seed"] == "5" and meta["mode"] == "neumann2"
    assert meta["tool"] == f"hoft {__version__}" and "thresholds_version" in meta
    assert header == "dim,rank,mean_error,max_error"
    assert len(rows) == 6


def test_energy_and_procrustes(tmp_path):
    out = tmp_path / "e.csv"
    assert main(["energy", "--dims", "128", "--ranks", "1,2", "--trials", "2",
                 "--out", str(out)]) == 0
    assert csv_parts(out)[1].startswith("dim,rank,mean_abs_diff,max_abs_diff")
    out = tmp_path / "p.csv"
    assert main(["procrustes", "--m", "12", "--n", "10", "--rank", "3", "--instances", "4",
                 "--out", str(out)]) == 0
    _, header, rows = csv_parts(out)
    assert header.startswith("instance,gap,bound,holds") and len(rows) == 4
    assert all(r.split(",")[3] == "true" for r in rows)


def test_failure_report(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(experiments.th, "PROCRUSTES_ONE_SIDED_TOL", 0.0)
    code = main(["procrustes", "--m", "8", "--n", "8", "--rank", "2", "--instances", "2",
                 "--out", str(tmp_path / "p.csv")])
    assert code != 0
    err = capsys.readouterr().err
    assert "instance 0" in err and "instance 1" in err


def test_bench(tmp_path):
    out = tmp_path / "b.csv"
    code = main(["bench", "--m", "256", "--n", "8", "--ranks", "2,4", "--repeats", "2",
                 "--out", str(out)])
    assert code in (0, 1)
    _, header, rows = csv_parts(out)
    assert header == "method,m,n,rank,mean_ns"
    assert {r.split(",")[0] for r in rows} == {"cwy_factored", "sequential_chain",
                                               "materialized_exact"}


def test_train_writes_trace_and_checkpoint(tmp_path):
    out = tmp_path / "run.csv"
    code = main(["train", "--method", "lora", "--task", "lowrank", "--m", "8", "--n", "8",
                 "--rank", "2", "--steps", "20", "--batch", "4", "--out", str(out)])
    assert code == 0
    meta, header, rows = csv_parts(out)
    assert header == "step,loss" and len(rows) == 20 and meta["method"] == "lora"
    adapter, extra = read_checkpoint(tmp_path / "run.ckpt.json")
    assert adapter.kind == "lora" and extra == {}


def test_train_quantized_keeps_codes(tmp_path):
    out = tmp_path / "q.csv"
    code = main(["train", "--method", "hoft", "--task", "rotation", "--m", "16", "--n", "16",
                 "--rank", "2", "--steps", "3000", "--seed", "0", "--quantize",
                 "--block-size", "16", "--double-quant", "--out", str(out)])
    assert code == 0
    _, extra = read_checkpoint(tmp_path / "q.ckpt.json")
    stored = extra["base_nf4"]
    task = make_task("rotation", 16, 16, 2, 0.0, Rng(0).child(0))
    fresh = quantize(task.w0, 16, True)
    assert stored.codes.tobytes() == fresh.codes.tobytes()
    assert np.array_equal(stored.absmax, fresh.absmax)


def test_bad_arguments(tmp_path, capsys):
    with pytest.raises(SystemExit):
        main(["figure1", "--dims", "a,b"])
    with pytest.raises(SystemExit):
        main(["train", "--method", "dora"])
    assert main(["figure1", "--dims", "8", "--ranks", "1", "--trials", "1",
                 "--out", str(tmp_path / "missing" / "f.csv")]) == 2
