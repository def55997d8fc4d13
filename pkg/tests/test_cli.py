import csv
import json

import pytest

from optregime.cli import UsageError, main, parse_config
from optregime.simulation import DgpSpec, generate


def test_simulate_flags():
    cfg = parse_config("simulate --dgp dgp1 --rho 0.5 --n 25000 --reps 100 --seed 7 --out r.csv".split())
    assert (cfg.command, cfg.dgp, cfg.rho, cfg.n, cfg.reps, cfg.seed) == ("simulate", "dgp1", 0.5, 25000, 100, 7)


def test_estimate_flags():
    cfg = parse_config("estimate --data d.csv --method nde-ipw --adjust-nde --xi 6".split())
    assert [e.name for e in cfg.estimators] == ["NDE_IPW_PROJECTED"]
    assert cfg.estimators[0].xi == 6


def test_estimator_list_and_condition():
    cfg = parse_config(["voi-test", "--dgp", "DGP2", "--estimators", "snmm+nde", "--condition", "L0_0=1"])
    assert cfg.estimators[0].name == "SNMM_PROJECTED" and cfg.condition == {"L0_0": 1}


@pytest.mark.parametrize("argv, flag", [
    (["simulate", "--dgp", "dgp1", "--rho", "1.5"], "--rho"),
    (["simulate", "--dgp", "dgp1", "--reps", "1"], "--reps"),
    (["estimate"], "--data"),
    (["voi-test", "--dgp", "dgp2", "--B", "10"], "--B"),
    (["simulate", "--dgp", "dgp7"], "--dgp"),
    (["simulate", "--dgp", "dgp1", "--estimators", "foo"], "--estimators"),
    (["voi-test", "--dgp", "dgp2", "--condition", "L0_0"], "--condition"),
])
def test_usage_errors_name_the_flag(argv, flag):
    with pytest.raises(UsageError) as info:
        parse_config(argv)
    assert info.value.flag == flag


def test_usage_exit_code(capsys):
    assert main(["simulate", "--dgp", "dgp1", "--rho", "1.5"]) == 2
    assert "--rho" in capsys.readouterr().err
    assert main(["estimate", "--data", "/nonexistent/d.csv"]) == 2
    assert "--data" in capsys.readouterr().err


def test_flags_override_config_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"dgp": "DGP2", "n": 1000, "reps": 5}))
    cfg = parse_config(["simulate", "--config", str(path), "--reps", "3"])
    assert (cfg.dgp, cfg.n, cfg.reps) == ("DGP2", 1000, 3)


def test_ratio_prints_value(capsys, tmp_path):
    argv = "ratio --rho 0.5 --eps-q 0.5 --eps 0.05 --eps-prime 0.05".split()
    assert main(argv + ["--out", str(tmp_path / "r.csv")]) == 0
    assert capsys.readouterr().out.strip() == "2.75"


def test_simulate_report_is_reproducible(tmp_path):
    rows = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        argv = ["simulate", "--dgp", "dgp1", "--n", "300", "--reps", "2", "--seed", "4", "--threads", "1",
                "--estimators", "ipw,nde-ipw,mean-y", "--out", str(out)]
        assert main(argv) == 0
        rows.append(out.read_bytes())
    assert rows[0] == rows[1]
    table = list(csv.DictReader(rows[0].decode().splitlines()))
    per_estimator = {}
    for r in table:
        per_estimator.setdefault(r["estimator"], []).append(r["statistic"])
    assert set(per_estimator) == {"IPW", "NDE_IPW", "MEAN_Y", "*"}
    assert per_estimator["*"] == ["excluded"]
    assert all(r["config_hash"] == table[0]["config_hash"] for r in table)


def test_estimate_on_csv(tmp_path, capsys):
    data = tmp_path / "d.csv"
    generate(DgpSpec("DGP1", n=3000, seed=2)).to_csv(data)
    out, js = tmp_path / "e.csv", tmp_path / "e.jsonl"
    code = main(["estimate", "--data", str(data), "--c-star", "3", "--estimators", "ipw,nde-ipw+nde,snmm",
                 "--xi", "3", "--out", str(out), "--json-out", str(js)])
    assert code == 0
    text = capsys.readouterr().out
    assert "IPW: theta=" in text and "NDE_IPW_PROJECTED" in text
    assert len(js.read_text().splitlines()) == 3


def test_estimator_failure_exit_code(tmp_path, capsys):
    data = tmp_path / "d.csv"
    # two subjects cannot support a degree-6 spline: the basis is refused
    generate(DgpSpec("DGP1", n=2, seed=2)).to_csv(data)
    out = tmp_path / "e.csv"
    assert main(["estimate", "--data", str(data), "--estimators", "ipw+nde", "--out", str(out)]) == 1
    assert "error" in out.read_text()
    assert "error" in json.loads(capsys.readouterr().err.strip().splitlines()[-1])
