import csv
import json
import subprocess
import sys

import pytest

from transport_tmle.cli import EXIT_INVALID, EXIT_NUMERIC, EXIT_OK, main


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    paths = {"missing": d / "m.csv", "missing_schema": d / "m.json",
             "survival": d / "s.csv", "survival_schema": d / "s.json", "dir": d}
    assert main(["simulate", "--design", "missing", "--n", "1500", "--seed", "3",
                 "--out", str(paths["missing"]), "--schema-out",
                 str(paths["missing_schema"])]) == EXIT_OK
    assert main(["simulate", "--design", "survival", "--n", "1500", "--seed", "4",
                 "--out", str(paths["survival"]), "--schema-out",
                 str(paths["survival_schema"])]) == EXIT_OK
    return paths


def read_json(path):
    return json.loads(path.read_text())


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as err:
        main(["--help"])
    assert err.value.code == 0
    assert "estimate-survival" in capsys.readouterr().out


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "transport_tmle.cli", "estimate", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert "--fluctuation" in out.stdout


def test_estimate_writes_finite_report(files, tmp_path):
    out, eic = tmp_path / "r.json", tmp_path / "eic.csv"
    code = main(["estimate", "--data", str(files["missing"]), "--schema",
                 str(files["missing_schema"]), "--out", str(out), "--eic-out", str(eic)])
    assert code == EXIT_OK
    rep = read_json(out)
    assert rep["ci_lo"] < rep["ate"] < rep["ci_hi"]
    with open(eic) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == rep["n"]


def test_schema_inferred_from_header(files, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["estimate", "--data", str(files["missing"]), "--out", str(a)])
    main(["estimate", "--data", str(files["missing"]), "--schema", str(files["missing_schema"]),
          "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_identical_runs_are_byte_identical(files, tmp_path):
    outs = [tmp_path / f"r{i}.json" for i in range(2)]
    for out in outs:
        assert main(["estimate-survival", "--data", str(files["survival"]), "--schema",
                     str(files["survival_schema"]), "--out", str(out)]) == EXIT_OK
    assert outs[0].read_bytes() == outs[1].read_bytes()
    sims = [tmp_path / f"d{i}.csv" for i in range(2)]
    for sim in sims:
        main(["simulate", "--design", "survival", "--n", "300", "--seed", "9", "--out", str(sim)])
    assert sims[0].read_bytes() == sims[1].read_bytes()


def test_flags_override_config(files, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"targeting": "joint", "fluctuation": "weight"}))
    out = tmp_path / "r.json"
    main(["estimate", "--data", str(files["missing"]), "--config", str(cfg),
          "--targeting", "separate", "--out", str(out)])
    rep = read_json(out)
    assert rep["targeting"] == "separate"
    assert rep["fluctuations"]["1"]["method"] == "logistic-weighted"


def test_less_aggressive_flag(files, tmp_path):
    out = tmp_path / "r.json"
    main(["estimate", "--data", str(files["missing"]), "--less-aggressive", "--out", str(out)])
    assert read_json(out)["variant"] == "less-aggressive"


def test_malformed_csv_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("s,w1,a,delta,y\n1,0,1,1,1\n0,1,1,,\n")
    assert main(["estimate", "--data", str(bad)]) == EXIT_INVALID
    assert "row 1" in capsys.readouterr().err
    bad.write_text("s,w1,a,delta,y\n1,zero,1,1,1\n0,1,,,\n")
    assert main(["estimate", "--data", str(bad)]) == EXIT_INVALID
    assert main(["estimate", "--data", str(tmp_path / "absent.csv")]) == EXIT_INVALID


def test_bad_config_exit_code(files, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"no_such_key": 1}))
    assert main(["estimate", "--data", str(files["missing"]), "--config", str(cfg)]) \
        == EXIT_INVALID
    cfg.write_text("{not json")
    assert main(["estimate", "--data", str(files["missing"]), "--config", str(cfg)]) \
        == EXIT_INVALID


def test_numeric_failure_exit_code(tmp_path):
    data = tmp_path / "inf.csv"
    data.write_text("s,w1,a,delta,y\n1,1e308,1,1,1e308\n1,-1e308,0,1,-1e308\n0,1,,,\n")
    assert main(["estimate", "--data", str(data)]) == EXIT_NUMERIC


def test_validate(files, tmp_path):
    out = tmp_path / "v.json"
    assert main(["validate", "--data", str(files["survival"]), "--survival", "--schema",
                 str(files["survival_schema"]), "--out", str(out)]) == EXIT_OK
    doc = read_json(out)
    assert doc["n"] == 1500 and doc["schema"]["tau"] == 5


def test_truth(tmp_path):
    out = tmp_path / "t.json"
    assert main(["truth", "--design", "missing", "--out", str(out)]) == EXIT_OK
    assert read_json(out)["ate"] == pytest.approx(0.173072, abs=5e-7)


def test_export_and_apply(files, tmp_path):
    bundle, local, applied = tmp_path / "b.json", tmp_path / "l.json", tmp_path / "a.json"
    assert main(["export-model", "--data", str(files["survival"]), "--survival", "--schema",
                 str(files["survival_schema"]), "--out", str(bundle), "--report-out",
                 str(local)]) == EXIT_OK
    assert main(["apply-model", "--bundle", str(bundle), "--target", str(files["survival"]),
                 "--out", str(applied)]) == EXIT_OK
    a, b = read_json(local), read_json(applied)
    assert a["ate"] == pytest.approx(b["ate"], abs=1e-12)
    assert a["sigma_n"] == pytest.approx(b["sigma_n"], abs=1e-12)


def test_apply_with_bad_bundle(files, tmp_path):
    bundle = tmp_path / "b.json"
    bundle.write_text(json.dumps({"format_version": 99}))
    assert main(["apply-model", "--bundle", str(bundle), "--target",
                 str(files["missing"])]) == EXIT_INVALID


def test_study_smoke(tmp_path, capsys):
    out = tmp_path / "study.csv"
    assert main(["study", "--design", "missing", "--n", "400", "--replications", "1",
                 "--scenarios", "both", "--out", str(out)]) == EXIT_OK
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert {r["variant"] for r in rows} == {"full", "less-aggressive"}
    assert "coverage" in rows[0]
    assert "less-aggressive" in capsys.readouterr().out
