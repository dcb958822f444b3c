import csv
import json

import numpy as np
import pytest

from crossgibbs.cli import main, read_config


def run(tmp_path, *argv):
    return main(["--out", str(tmp_path), *argv])


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_gen_examples(tmp_path):
    assert run(tmp_path, "gen", "mcar", "--I", "50", "--q", "0.1", "--seed", "7") == 0
    n = len(rows(tmp_path / "mcar.csv"))
    assert abs(n - 250) < 4 * np.sqrt(225)
    meta = json.loads((tmp_path / "mcar.json").read_text())
    assert meta["args"]["seed"] == 7 and meta["N"] == n
    assert run(tmp_path, "gen", "balanced-cells", "--I", "3,3", "--n", "1") == 0
    assert len(rows(tmp_path / "balanced-cells.csv")) == 9
    assert run(tmp_path, "gen", "disconnected", "--I", "3", "--comms", "2") == 0
    assert len(rows(tmp_path / "disconnected.csv")) == 18
    assert run(tmp_path, "gen", "balanced-levels", "--I", "6", "--m", "2", "--seed", "1") == 0
    assert len(rows(tmp_path / "balanced-levels.csv")) == 12


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        run(tmp_path, "gen", "mcar", "--I", "x")
    assert e.value.code == 2
    with pytest.raises(SystemExit):
        run(tmp_path, "frobnicate")
    assert run(tmp_path, "gen", "balanced-levels", "--I", "6") == 2
    assert run(tmp_path, "rate") == 2
    assert run(tmp_path, "gen", "mcar", "--I", "5", "--q", "2") == 1


def test_rate_balanced_cells(tmp_path):
    run(tmp_path, "gen", "balanced-cells", "--I", "3,4", "--n", "2")
    assert run(tmp_path, "--name", "r", "rate", "--data", str(tmp_path / "balanced-cells.csv")) == 0
    got = rows(tmp_path / "r.csv")
    cgs = [r for r in got if r["scheme"] == "cGS"][0]
    assert float(cgs["mixing_numeric"]) == pytest.approx(1.0)
    gs = [r for r in got if r["scheme"] == "GS"][0]
    assert float(gs["mixing_numeric"]) == pytest.approx(float(gs["mixing_theory"]))


def test_rate_mcar_grid_parallel_and_nonconvergence(tmp_path):
    assert run(tmp_path, "--jobs", "2", "rate", "--mcar-grid", "10,20", "--q", "0.3", "--seed", "1") == 0
    got = rows(tmp_path / "rates.csv")
    assert [int(r["grid_size"]) for r in got] == [10, 10, 20, 20]
    code = run(tmp_path, "--name", "nc", "rate", "--mcar-grid", "20", "--q", "0.3",
               "--method", "PowerIteration", "--max-iters", "2")
    assert code == 1
    assert all(r["converged"] == "False" for r in rows(tmp_path / "nc.csv"))


def test_sample_reproducible_and_diag(tmp_path):
    run(tmp_path, "gen", "balanced-levels", "--I", "6", "--m", "2", "--seed", "1", "--simulate-y")
    data = str(tmp_path / "balanced-levels.csv")
    args = ["sample", "--data", data, "--scheme", "gs", "--iters", "300", "--seed", "1"]
    assert run(tmp_path / "a", *args) == 0
    assert run(tmp_path / "b", *args) == 0
    a = (tmp_path / "a" / "chain_GS_run0.csv").read_text()
    assert a == (tmp_path / "b" / "chain_GS_run0.csv").read_text()
    assert run(tmp_path, "sample", "--data", data, "--scheme", "cgs,cgs+px", "--iters", "400", "--burn", "50",
               "--runs", "2", "--unknown-tau", "--monitor", "a0,abar1,da1[1],sigma1") == 0
    rep = json.loads((tmp_path / "sample.json").read_text())
    assert set(rep["schemes"]) == {"cGS", "cGS+PX"}
    assert rep["args"]["seed"] == 0 and len(rep["schemes"]["cGS"]["runs"]) == 2
    chain = tmp_path / "chain_cGS_run0.csv"
    assert run(tmp_path, "diag", str(chain), "--cross", "abar1,da1[1]", "--max-lag", "20") == 0
    xc = rows(tmp_path / "diag_xcorr.csv")
    assert len(xc) == 41
    assert run(tmp_path, "diag", str(chain), "--cross", "abar1,nope") == 2


def test_bench_and_plot(tmp_path):
    pytest.importorskip("matplotlib")
    assert run(tmp_path, "--plot", "bench", "--sizes", "100,200", "--sweeps", "2", "--repeats", "1") == 0
    rep = json.loads((tmp_path / "bench.json").read_text())
    assert "GS" in rep["slopes"] and len(rep["cgs_over_gs"]) == 2
    assert (tmp_path / "bench.png").exists()


def test_config_file_and_env(tmp_path, monkeypatch):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# defaults\nI = 4,4\nn = 3\nname = grid\n")
    monkeypatch.setenv("CROSSGIBBS_OUT", str(tmp_path / "envout"))
    assert main(["gen", "balanced-cells", "--config", str(cfg)]) == 0
    assert len(rows(tmp_path / "envout" / "grid.csv")) == 16
    # flags override the file
    assert main(["gen", "balanced-cells", "--config", str(cfg), "--I", "2,2"]) == 0
    assert len(rows(tmp_path / "envout" / "grid.csv")) == 4
    assert read_config(cfg)["n"] == "3"
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense = 1\n")
    assert main(["gen", "balanced-cells", "--I", "2", "--config", str(bad)]) == 2
