import csv
import json
from pathlib import Path

import pytest

from probdml import cli, validation
from probdml.config import RunConfig, parse_kv

SMALL = ["--per-class", "12", "--classes", "3", "--dim", "4", "--feature-dim", "6", "--epochs", "2", "--batch-size", "6"]


def _run(args, tmp_path, capsys=None):
    code = cli.main(list(args) + ["--out", str(tmp_path)])
    out = capsys.readouterr() if capsys else None
    return code, out


def _only_dir(tmp_path, prefix):
    dirs = sorted(Path(tmp_path).glob(f"{prefix}-*"))
    assert len(dirs) == 1, dirs
    return dirs[0]


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_validate_passes_and_prints_counts(tmp_path, capsys):
    code, out = _run(["validate"], tmp_path, capsys)
    assert code == 0
    for suite in validation.SUITES:
        assert f"{suite}: " in out.out and " passed" in out.out
    man = json.loads((_only_dir(tmp_path, "validate") / "manifest.json").read_text())
    assert man["status"] == "ok" and "validate.json" in man["artifacts"]


def test_validate_failure_exit_code(tmp_path, capsys, monkeypatch):
    def broken():
        yield "always fails", False

    monkeypatch.setitem(validation.SUITES, "broken", broken)
    code, out = _run(["validate", "--suites", "broken"], tmp_path, capsys)
    assert code == cli.EXIT_ASSERTION
    assert "broken: 0/1 passed" in out.out


def test_fit_normalizer_json(tmp_path, capsys):
    code, out = _run(["fit-normalizer", "--dim", "128", "--kmin", "10", "--kmax", "50", "--points", "41"], tmp_path, capsys)
    assert code == 0
    d = json.loads(out.out)
    assert set(d) == {"dim", "a", "b", "c", "kmin", "kmax", "mse_rel"}
    assert d["dim"] == 128 and d["mse_rel"] < 1e-3
    code, out = _run(["fit-normalizer", "--preset", "paper-512", "--dim", "512"], tmp_path, capsys)
    d = json.loads(out.out)
    assert d["a"] == 868.0 and d["mse_rel"] < 1e-3


def test_metric_surface_b_vmf_self_zero(tmp_path):
    args = ["metric-surface", "--metric", "b_vmf", "--kappa-p", "5", "--kappa-z-range", "1:9:5", "--angle-range", "0:180:7"]
    assert _run(args, tmp_path)[0] == 0
    rows = _rows(_only_dir(tmp_path, "metric-surface") / "surface.csv")
    assert rows[0] == ["angle", "kappa_z", "distance"]
    assert len(rows) == 1 + 35
    hit = [r for r in rows[1:] if float(r[0]) == 0.0 and float(r[1]) == 5.0]
    assert len(hit) == 1 and abs(float(hit[0][2])) < 1e-12


def test_sweep_omega_schema(tmp_path):
    assert _run(["sweep-omega", "--grid", "0,0.01,0.1,1,10", "--metric", "cos"] + SMALL, tmp_path)[0] == 0
    rows = _rows(_only_dir(tmp_path, "sweep-omega") / "omega.csv")
    assert rows[0] == ["omega", "recall1"]
    assert [float(r[0]) for r in rows[1:]] == [0, 0.01, 0.1, 1, 10]
    assert all(0 <= float(r[1]) <= 1 for r in rows[1:])


def test_pipeline_and_bitwise_reproducibility(tmp_path):
    for sub in ("a", "b"):
        out = tmp_path / sub
        assert _run(["gen-data"] + SMALL, out)[0] == 0
        data = _only_dir(out, "gen-data") / "dataset.csv"
        assert _run(["train", "--data", str(data)] + SMALL, out)[0] == 0
        ckpt = _only_dir(out, "train") / "checkpoint.json"
        assert _run(["eval", "--checkpoint", str(ckpt)] + SMALL, out)[0] == 0
    for prefix in ("gen-data", "train", "eval"):
        ma = json.loads((_only_dir(tmp_path / "a", prefix) / "manifest.json").read_text())
        mb = json.loads((_only_dir(tmp_path / "b", prefix) / "manifest.json").read_text())
        assert ma["artifacts"] == mb["artifacts"]
        assert ma["config_hash"] == mb["config_hash"] and ma["seed"] == mb["seed"]
        assert ma["wall_time"] >= 0
    ev = _only_dir(tmp_path / "a", "eval")
    for name in ("report_cosine.json", "report_euclidean.json"):
        rep = json.loads((ev / name).read_text())
        assert set(rep["recall_at"]) == {"1", "2", "4", "8"} and 0 <= rep["map_at_r"] <= 1
    assert _rows(ev / "norm_hist.csv")[0] == ["group", "lo", "hi", "count"]
    assert {r[0] for r in _rows(ev / "norm_hist.csv")[1:]} == {"ambiguous", "clean"}
    assert _rows(ev / "diversity.csv")[0] == ["name", "feature_diversity", "cluster_diversity"]
    tr = _only_dir(tmp_path / "a", "train")
    assert _rows(tr / "log.csv")[0] == ["epoch", "loss", "recall1", "map", "mean_kappa"]
    assert len(_rows(tr / "trace.csv")) > 1
    raw = (tr / "log.csv").read_bytes()
    assert b"\r\n" not in raw


def test_seed_changes_hash_and_output(tmp_path):
    _run(["gen-data"] + SMALL, tmp_path)
    _run(["gen-data", "--seed", "1"] + SMALL, tmp_path)
    dirs = sorted(tmp_path.glob("gen-data-*"))
    assert len(dirs) == 2
    assert (dirs[0] / "dataset.csv").read_bytes() != (dirs[1] / "dataset.csv").read_bytes()


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# toy\nper_class = 12\nclasses = 3\ndim = 4\nfeature_dim = 6\nseed = 5  # trailing\n")
    assert _run(["gen-data", "--config", str(cfg), "--seed", "7"], tmp_path)[0] == 0
    man = json.loads((_only_dir(tmp_path, "gen-data") / "manifest.json").read_text())
    assert man["seed"] == 7 and man["config"]["per_class"] == 12


def test_config_errors_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("per_class = 12\nbogus_key = 1\n")
    code, out = _run(["gen-data", "--config", str(cfg)], tmp_path, capsys)
    assert code == cli.EXIT_CONFIG and "bogus_key" in out.err
    code, out = _run(["train", "--batch-size", "many"], tmp_path, capsys)
    assert code == cli.EXIT_CONFIG and "batch_size" in out.err
    code, out = _run(["train", "--metric", "nope"], tmp_path, capsys)
    assert code == cli.EXIT_CONFIG
    code, out = _run(["metric-surface", "--angle-range", "0:90"], tmp_path, capsys)
    assert code == cli.EXIT_CONFIG and "angle-range" in out.err
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--no-such-flag", "1"])
    assert exc.value.code == cli.EXIT_CONFIG


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_3(tmp_path, capsys):
    args = ["train", "--metric", "l2", "--lr", "1e300", "--kappa-init", "1e150"] + SMALL
    code, out = _run(args, tmp_path, capsys)
    assert code == cli.EXIT_NUMERICAL
    run = _only_dir(tmp_path, "train")
    assert (run / "numerical_error.json").exists()
    assert json.loads((run / "manifest.json").read_text())["status"] == "numerical_error"


def test_run_config_hash_and_text_roundtrip():
    a = RunConfig({"seed": 3, "out": "x"})
    b = RunConfig(parse_kv(a.to_text()))
    assert a.hash() == b.hash()
    assert RunConfig({"seed": 3, "out": "elsewhere"}).hash() == a.hash()
    assert RunConfig({"seed": 4}).hash() != a.hash()
