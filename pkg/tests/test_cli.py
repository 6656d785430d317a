import re
from pathlib import Path

import numpy as np
import pytest
import yaml

from thermsched.cli import main, read_csv, write_heatmaps
from thermsched.experiment import load_checkpoint
from thermsched.metrics import SUMMARY_COLUMNS
from thermsched.simcore import TRACE_COLUMNS

FAST = {
    "mesh": {"rows": 2, "cols": 2},
    "workload": {"lam": 2.0},
    "run": {"horizon": 20.0, "heatmap_every": 5.0},
    "learner": {"train_runs": 1, "ref_delay": 20},
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "fast.yaml"
    p.write_text(yaml.safe_dump(FAST))
    return p


def strip_header(text):
    return [ln for ln in text.splitlines() if not ln.startswith("#")]


def test_run_writes_artifacts(cfg_path, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg_path), "--scheduler", "ir", "--seed", "3", "--out", str(out)]) == 0
    assert "ir seed=3" in capsys.readouterr().out
    trace = (out / "trace_ir_seed3.csv").read_text()
    assert trace.startswith("# ")
    assert strip_header(trace)[0] == ",".join(TRACE_COLUMNS)
    summary = read_csv(out / "summary.csv")
    assert list(summary[0]) == list(SUMMARY_COLUMNS)
    assert summary[0]["scheduler"] == "ir" and summary[0]["mesh"] == "2x2"
    meta, theta = load_checkpoint(out / "theta_ir_seed3.txt")
    assert meta["mode"] == "ir" and int(meta["dims"]) == len(theta) == 16
    assert "bank" in meta
    heat = (out / "heatmap_ir_seed3.txt").read_text()
    blocks = "\n".join(strip_header(heat)).split("\n\n")
    assert len(blocks) >= 3 and all(len(b.splitlines()) == 2 for b in blocks)
    resolved = yaml.safe_load((out / "config.yaml").read_text())
    assert resolved["run"]["seeds"] == [3] and resolved["mesh"]["rows"] == 2
    for f in out.iterdir():
        if f.suffix in (".csv", ".txt"):
            assert f.read_text().startswith("# "), f.name


def test_run_is_byte_identical(cfg_path, tmp_path):
    for d in ("a", "b"):
        assert main(["run", "--config", str(cfg_path), "--scheduler", "lct", "--seed", "1",
                     "--out", str(tmp_path / d)]) == 0

    def body(p):
        return strip_header(p.read_text())

    for name in ("trace_lct_seed1.csv", "summary.csv", "theta_lct_seed1.txt"):
        assert body(tmp_path / "a" / name) == body(tmp_path / "b" / name)


def test_missing_field_exits_nonzero(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("run:\n  horizon:\n")
    assert main(["run", "--config", str(p)]) == 2
    assert "run.horizon" in capsys.readouterr().err


def test_sweep_and_report(cfg_path, tmp_path, capsys):
    out = tmp_path / "sw"
    rc = main(["sweep", "--config", str(cfg_path), "--scheduler", "rand", "--out", str(out),
               "--grid", "workload.lam=1.0,3.0", "--workers", "2"])
    assert rc == 0
    table = capsys.readouterr().out
    assert len(re.findall(r"^rand ", table, re.M)) == 2
    agg = read_csv(out / "aggregate.csv")
    assert sorted(float(r["lambda"]) for r in agg) == [1.0, 3.0]
    assert main(["report", "--out", str(out)]) == 0
    assert capsys.readouterr().out == table


def test_sweep_order_independent(cfg_path, tmp_path):
    for d, w in (("one", "1"), ("two", "2")):
        main(["sweep", "--config", str(cfg_path), "--scheduler", "rand", "--out", str(tmp_path / d),
              "--grid", "workload.lam=1.0,2.0,3.0", "--workers", w])
    a = strip_header((tmp_path / "one" / "aggregate.csv").read_text())
    b = strip_header((tmp_path / "two" / "aggregate.csv").read_text())
    assert a == b


def test_empty_grid_single_run(cfg_path, tmp_path):
    assert main(["sweep", "--config", str(cfg_path), "--scheduler", "tbo", "--out", str(tmp_path)]) == 0
    assert len(read_csv(tmp_path / "sweep_summary.csv")) == 1


def test_mesh_grid_scales_load(cfg_path, tmp_path):
    assert main(["sweep", "--config", str(cfg_path), "--scheduler", "rand", "--out", str(tmp_path),
                 "--grid", "mesh=2x2,3x3"]) == 0
    rows = {r["mesh"]: float(r["lambda"]) for r in read_csv(tmp_path / "sweep_summary.csv")}
    assert rows == {"2x2": 2.0, "3x3": pytest.approx(4.5)}


def test_sweep_cap_refused(cfg_path, tmp_path, capsys):
    rc = main(["sweep", "--config", str(cfg_path), "--out", str(tmp_path),
               "--grid", "workload.lam=" + ",".join(str(i + 1) for i in range(3000))])
    assert rc == 2 and "3000 runs" in capsys.readouterr().err


def test_report_without_data(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == 1


def test_oracle_check_short(capsys):
    rc = main(["oracle-check", "--updates", "20000", "--seed", "0"])
    text = capsys.readouterr().out
    assert "rho*=1.018833" in text and "policy agreement=" in text
    assert rc in (0, 1) and text.strip().endswith("PASS" if rc == 0 else "FAIL")


def test_heatmap_format(tmp_path):
    p = tmp_path / "h.txt"
    write_heatmaps(p, "# h\n", [np.full((2, 3), 320.0), np.full((2, 3), 321.5)])
    assert p.read_text() == ("# h\n320.000 320.000 320.000\n320.000 320.000 320.000\n\n"
                             "321.500 321.500 321.500\n321.500 321.500 321.500\n")
