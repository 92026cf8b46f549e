import csv
import json
import subprocess
import sys

import pytest

from mrtwcls.cli import main


def run(*args):
    return main([str(a) for a in args])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


@pytest.fixture(scope="module")
def multi_arm_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--kind", "multi_arm", "--n", 37, "--T", 210, "--seed", 3, "--out", out) == 0
    return out / "result.csv"


def test_simulate_appendix_c(tmp_path):
    assert run("simulate", "--kind", "appendix_c", "--n", 37, "--T", 210, "--seed", 7, "--out", tmp_path) == 0
    assert len(read_csv(tmp_path / "result.csv")) == 7770
    summary = json.loads((tmp_path / "result.json").read_text())
    assert summary["rows"] == 7770
    cfg = json.loads((tmp_path / "effective_config.json").read_text())
    assert cfg["seed"] == 7 and cfg["command"] == "simulate"


def test_simulate_is_byte_identical(tmp_path):
    names = ("result.csv", "result.json", "effective_config.json")
    outputs = []
    for _ in range(2):
        assert run("simulate", "--kind", "appendix_c", "--n", 3, "--T", 20, "--seed", 7, "--out", tmp_path) == 0
        outputs.append([(tmp_path / f).read_bytes() for f in names])
    assert outputs[0] == outputs[1]


def test_simulate_bad_scenario(tmp_path):
    assert run("simulate", "--kind", "appendix_c", "--n", 0, "--T", 5, "--seed", 1, "--out", tmp_path) == 2
    assert run("simulate", "--kind", "appendix_c", "--n", 3, "--T", 5, "--out", tmp_path) == 2


def test_fit_q1_style_spec_on_appendix_c(tmp_path):
    run("simulate", "--kind", "appendix_c", "--n", 37, "--T", 210, "--seed", 7, "--out", tmp_path / "sim")
    spec = tmp_path / "q1.json"
    spec.write_text(json.dumps({"arms": ["treatment"], "controls": ["x"], "moderators": [],
                                "labels": {"treatment": "Activity suggestion"}}))
    assert run("fit", "--data", tmp_path / "sim" / "result.csv", "--spec", spec, "--out", tmp_path / "fit") == 0
    rows = read_csv(tmp_path / "fit" / "result.csv")
    effects = [r for r in rows if r["Role"] == "effect"]
    assert len(effects) == 1 and effects[0]["Variable"] == "Activity suggestion"
    result = json.loads((tmp_path / "fit" / "result.json").read_text())
    assert result["df"] == [1, 34]


def test_fit_q3_four_effect_rows(tmp_path, multi_arm_csv):
    assert run("fit", "--data", multi_arm_csv, "--spec", "q3", "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "result.csv")
    assert [r["Symbol"] for r in rows if r["Role"] == "effect"] == ["beta_0", "beta_1", "beta_2", "beta_3"]


def test_fit_round_option(tmp_path, multi_arm_csv):
    assert run("fit", "--data", multi_arm_csv, "--spec", "q1", "--round", 3, "--out", tmp_path) == 0
    est = read_csv(tmp_path / "result.csv")[0]["Estimate"]
    assert len(est.split(".")[1]) == 3
    full = json.loads((tmp_path / "result.json").read_text())["coefficients"][0]["Estimate"]
    assert round(full, 3) == float(est)


def test_fit_moderator_missing_from_controls(tmp_path, multi_arm_csv, capsys):
    spec = tmp_path / "bad.json"
    spec.write_text(json.dumps({"arms": ["walking"], "controls": [], "moderators": ["location"]}))
    assert run("fit", "--data", multi_arm_csv, "--spec", spec, "--out", tmp_path) == 2
    assert "SpecViolation" in capsys.readouterr().err


def test_fit_invalid_row(tmp_path, capsys):
    data = tmp_path / "d.csv"
    data.write_text("participant,t,available,arm,prob_treatment,outcome\n"
                    "a,1,0,treatment,0.5,1\nb,1,1,control,0.5,1\n")
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"arms": ["treatment"]}))
    assert run("fit", "--data", data, "--spec", spec, "--out", tmp_path) == 2
    assert "row 1" in capsys.readouterr().err


def test_fit_rank_deficient_is_numerical(tmp_path, multi_arm_csv):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"arms": ["walking", "anti_sedentary"], "controls": ["day", "t"]}))
    data = tmp_path / "d.csv"
    with open(multi_arm_csv, encoding="utf-8") as f:
        lines = f.read().splitlines()
    header = lines[0].split(",")
    t_col, day_col = header.index("t"), header.index("day")
    out = [lines[0]]
    for line in lines[1:]:
        v = line.split(",")
        v[day_col] = str(2 * int(v[t_col]))
        out.append(",".join(v))
    data.write_text("\n".join(out) + "\n")
    assert run("fit", "--data", data, "--spec", spec, "--out", tmp_path / "o") == 3


def test_missing_file_is_io_error(tmp_path):
    assert run("fit", "--data", tmp_path / "nope.csv", "--spec", "q1", "--out", tmp_path) == 4


def test_unwritable_output(tmp_path, multi_arm_csv):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("fit", "--data", multi_arm_csv, "--spec", "q1", "--out", blocker / "sub") == 4


def test_unknown_flag_is_error(capsys):
    with pytest.raises(SystemExit) as exc:
        run("fit", "--bogus", 1)
    assert exc.value.code == 2


def test_config_precedence(tmp_path, multi_arm_csv):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data": str(multi_arm_csv), "spec": "q1", "level": 0.9}))
    assert run("fit", "--config", cfg, "--level", 0.8, "--out", tmp_path / "o") == 0
    eff = json.loads((tmp_path / "o" / "effective_config.json").read_text())
    assert eff["level"] == 0.8
    assert "80% LCL" in (tmp_path / "o" / "result.csv").read_text()
    cfg.write_text(json.dumps({"data": str(multi_arm_csv), "spec": "q1", "nonsense": 1}))
    assert run("fit", "--config", cfg, "--out", tmp_path / "p") == 2


def test_mc_twice_identical(tmp_path):
    for d in ("a", "b"):
        assert run("mc", "--preset", "appendix-c", "--reps", 10, "--seed", 5, "--n", 10, "--T", 30,
                   "--out", tmp_path / d) == 0
    assert (tmp_path / "a" / "result.csv").read_bytes() == (tmp_path / "b" / "result.csv").read_bytes()
    rows = read_csv(tmp_path / "a" / "result.csv")
    assert [r["estimator"] for r in rows] == ["WCLS-1", "WCLS-2", "WCLS-3", "WCLS-4"]
    assert {"bias", "standard deviation", "95% coverage probability"} <= set(rows[0])


def test_compare_gee_rows(tmp_path):
    assert run("compare-gee", "--reps", 5, "--seed", 5, "--n", 100, "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "result.csv")
    assert [r["estimator"] for r in rows] == ["WCLS", "WCLS", "GEE-indep", "GEE-indep", "GEE-exch", "GEE-exch"]


def test_mc_from_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({
        "scenario": {"kind": "availability_marginal", "n": 20, "T": 30},
        "estimators": [{"name": "marginal", "type": "wcls", "model": {"arms": ["treatment"], "controls": ["x"]}}],
        "truth": 0.4}))
    assert run("mc", "--config", cfg, "--reps", 3, "--seed", 1, "--out", tmp_path / "o") == 0
    assert len(read_csv(tmp_path / "o" / "result.csv")) == 1


def test_mc_requires_seed(tmp_path):
    assert run("mc", "--preset", "appendix-c", "--reps", 2, "--out", tmp_path) == 2


def test_sensitivity_default_and_custom_grid(tmp_path, multi_arm_csv):
    assert run("sensitivity", "--data", multi_arm_csv, "--spec", "q2", "--out", tmp_path / "a") == 0
    rows = read_csv(tmp_path / "a" / "result.csv")
    assert len(rows) == 42 and list(rows[0]) == ["day", "estimate", "lcl", "ucl", "comparator_estimate"]
    assert run("sensitivity", "--data", multi_arm_csv, "--spec", "q2", "--grid", "0,20,41",
               "--out", tmp_path / "b") == 0
    assert [r["day"] for r in read_csv(tmp_path / "b" / "result.csv")] == ["0.0", "20.0", "41.0"]


def test_sensitivity_missing_day_column(tmp_path):
    run("simulate", "--kind", "endogenous_two_period", "--n", 20, "--T", 2, "--seed", 1, "--out", tmp_path / "s")
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"arms": ["treatment"], "controls": ["x"], "moderators": ["x"]}))
    assert run("sensitivity", "--data", tmp_path / "s" / "result.csv", "--spec", spec, "--out", tmp_path) == 2


@pytest.mark.parametrize("cmd", ["fit", "simulate", "mc", "compare-gee", "sensitivity"])
def test_help_lists_flags(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        run(cmd, "--help")
    assert exc.value.code == 0
    text = capsys.readouterr().out
    assert "--out" in text and "--config" in text and "--round" in text


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mrtwcls.cli", "simulate", "--kind", "appendix_c",
                           "--n", "2", "--T", "3", "--seed", "1", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert len(read_csv(tmp_path / "result.csv")) == 6
