import argparse
import os

import pandas as pd
import pytest

from models.precoding import Method
from run import EXIT_INFEASIBLE, EXIT_IO, EXIT_OK, EXIT_VALIDATION, main, non_negative_int, parse_methods

SCENARIO = """\
m = 24
k = 2
n = 1
trials = 20
seed = 4
"""


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SCENARIO, encoding="utf-8")
    return str(path)


def test_parse_methods():
    assert parse_methods("ZF, eMRT") == (Method.ZF, Method.EMRT)


def test_validate_ok(scenario_file):
    assert main(["validate", scenario_file]) == EXIT_OK


def test_validate_reports_errors(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("m = 24\nk = 2\nt_pilot = 6\n", encoding="utf-8")
    assert main(["validate", str(path)]) == EXIT_VALIDATION


def test_unknown_key_is_a_validation_error(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("m = 24\nbogus = 1\n", encoding="utf-8")
    assert main(["run", str(path)]) == EXIT_VALIDATION


def test_missing_file_is_io_error(tmp_path):
    assert main(["validate", str(tmp_path / "missing.toml")]) == EXIT_IO


def test_run_writes_outputs(scenario_file, tmp_path):
    out = tmp_path / "out"
    code = main(["run", scenario_file, "--methods", "SBM,eZF", "--closed-form", "--trials", "10",
                 "--out", str(out)])
    assert code == EXIT_OK
    summary = pd.read_csv(out / "summary.csv")
    assert list(zip(summary["method"], summary["source"])) == [("SBM", "MC"), ("SBM", "ClosedForm"), ("eZF", "MC")]


def test_run_infeasible_precoder(tmp_path):
    path = tmp_path / "tight.toml"
    path.write_text("m = 8\nk = 2\nn = 1\nchannel_model = \"iid\"\ntrials = 5\n", encoding="utf-8")
    code = main(["run", str(path), "--methods", "eZF", "--out", str(tmp_path / "out")])
    assert code == EXIT_INFEASIBLE


def test_sweep_and_plotdata(tmp_path):
    sweep = tmp_path / "tiny.toml"
    sweep.write_text('name = "tiny"\naxis = "p_d_db"\nvalues = [0, 10]\nmethods = ["SBM"]\n' + SCENARIO,
                     encoding="utf-8")
    out = tmp_path / "results"
    assert main(["sweep", str(sweep), "--out", str(out), "--jobs", "2"]) == EXIT_OK
    assert main(["plotdata", str(out / "tiny.csv"), "--column", "sum_rate"]) == EXIT_OK
    assert os.path.exists(out / "SBM_C_MC.dat")
    assert os.path.exists(out / "SBM_S_MC.dat")


@pytest.mark.parametrize("flag, value", [("--seed", "-1"), ("--trials", "0"), ("--jobs", "-2")])
def test_rejects_out_of_range_integers(scenario_file, flag, value):
    with pytest.raises(SystemExit) as info:
        main(["run", scenario_file, flag, value])
    assert info.value.code == 2


def test_non_negative_int():
    assert non_negative_int("0") == 0
    with pytest.raises(argparse.ArgumentTypeError):
        non_negative_int("-5")


def test_run_closed_form_sandwich_flag(scenario_file, tmp_path):
    rates = {}
    for form in ("printed", "derived"):
        out = tmp_path / form
        code = main(["run", scenario_file, "--methods", "SBM", "--closed-form", "--trials", "5",
                     "--moment", "circular", "--sandwich", form, "--out", str(out)])
        assert code == EXIT_OK
        summary = pd.read_csv(out / "summary.csv")
        rates[form] = summary.set_index("source").loc["ClosedForm", "avg_c"]
    assert rates["printed"] != rates["derived"]
