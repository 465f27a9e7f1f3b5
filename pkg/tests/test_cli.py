import csv
import json

import pytest

from edgeworth_euler.cli import main


def write_cfg(tmp_path, **over):
    doc = {"model": {"kind": "GBM", "params": [0.0, 0.2, 1.0]},
           "grid": {"n_list": [8, 16, 32], "m": 2},
           "mc": {"M": 200, "seed": 3, "pred_M": 100},
           "experiment": {"outdir": str(tmp_path / "out")}}
    for k, v in over.items():
        doc[k].update(v)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(doc))
    return str(p)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_validate_quick_passes(tmp_path, capsys):
    assert main(["validate", write_cfg(tmp_path), "--quick"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 10
    man = json.load(open(tmp_path / "out" / "manifest.json"))
    assert man["tables"]["validate"] == "validate.csv" and man["seed"] == 3


def test_unknown_subcommand_exits_2(tmp_path):
    with pytest.raises(SystemExit) as ei:
        main(["plot", write_cfg(tmp_path)])
    assert ei.value.code == 2


def test_invalid_config_exits_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, grid={"T_points": [1.5]})
    assert main(["simulate", cfg]) == 2
    assert "grid.T_points[0]" in capsys.readouterr().err


def test_studentized_density_csv(tmp_path):
    assert main(["density", write_cfg(tmp_path), "--kind", "studentized", "--n", "16"]) == 0
    files = list((tmp_path / "out").glob("*.csv"))
    assert len(files) == 1
    rows = read_csv(files[0])
    assert rows[0] == ["y", "phi", "correction", "total"]
    y, phi, corr, tot = map(float, rows[len(rows) // 2])
    assert tot == pytest.approx(phi + corr, abs=1e-15)


def test_simulate_writes_functionals(tmp_path):
    assert main(["simulate", write_cfg(tmp_path, grid={"T_points": [0.5, 1.0]})]) == 0
    rows = read_csv(tmp_path / "out" / "functionals_n16.csv")
    assert rows[0] == ["stream", "T", "X", "X_euler", "Sigma", "V", "Vbar", "M", "N"]
    assert len(rows) == 1 + 2 * 200


def test_env_overrides_and_flag_precedence(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path)
    monkeypatch.setenv("EDGEWORTH_EULER_OUTDIR", str(tmp_path / "env"))
    monkeypatch.setenv("EDGEWORTH_EULER_WORKERS", "2")
    assert main(["simulate", cfg]) == 0
    assert (tmp_path / "env" / "functionals_n8.csv").exists()
    assert main(["simulate", cfg, "--outdir", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "functionals_n8.csv").exists()
    monkeypatch.setenv("EDGEWORTH_EULER_WORKERS", "many")
    assert main(["simulate", cfg]) == 2


def test_seed_flag_changes_output_and_manifest(tmp_path):
    cfg = write_cfg(tmp_path)
    main(["simulate", cfg, "--outdir", str(tmp_path / "a")])
    main(["simulate", cfg, "--outdir", str(tmp_path / "b"), "--seed", "4"])
    a = (tmp_path / "a" / "functionals_n8.csv").read_bytes()
    b = (tmp_path / "b" / "functionals_n8.csv").read_bytes()
    assert a != b
    assert json.load(open(tmp_path / "b" / "manifest.json"))["seed"] == 4


def test_rates_writes_fits(tmp_path):
    cfg = write_cfg(tmp_path, experiment={"campaigns": ["strong"]})
    assert main(["rates", cfg]) == 0
    rows = read_csv(tmp_path / "out" / "fits.csv")
    assert rows[0][:2] == ["table", "slope"] and rows[1][0] == "strong_error"
    assert main(["report", cfg]) == 0
    man = json.load(open(tmp_path / "out" / "manifest.json"))
    assert {"fits", "strong_error"} <= set(man["tables"])
