import json
from pathlib import Path

import pytest

from thirring_lab.cli import SCHEMAS, main, resolve_params
from thirring_lab.errors import ContractViolation

DATA = Path(__file__).parent / "data" / "k0"


def run(tmp_path, name, *args):
    out = tmp_path / name
    code = main([*args, "--out", str(out), "--threads", "1"])
    return code, out


def result(out):
    return json.loads((out / "result.json").read_text())["result"]


def test_anomalies_free_point(tmp_path, capsys):
    code, out = run(tmp_path, "a", "thirring", "anomalies", "--lambda", "0", "--xi", "0.5")
    assert code == 0
    r = result(out)
    assert r["a"] == 1.0 and r["a_bar"] == 1.0 and r["eta"] == 0.0
    assert json.loads(capsys.readouterr().out) == r


def test_verify_axioms_free(tmp_path):
    code, out = run(tmp_path, "v", "verify", "axioms", "--lambda", "0", "--trials", "100",
                    "--seed", "7")
    assert code == 0
    assert result(out)["all_passed"] is True


def test_verify_failure_exit_code(tmp_path):
    code, out = run(tmp_path, "b", "verify", "bosonization", "--tol", "1e-30", "--lambda", "0.1")
    assert code == 3
    assert result(out)["passed"] is False


def test_exit_codes(tmp_path, capsys):
    assert run(tmp_path, "c", "thirring", "anomalies", "--lambda", "9")[0] == 1
    assert run(tmp_path, "c", "thirring", "anomalies", "--bogus", "1")[0] == 1
    assert run(tmp_path, "c", "thirring", "evaln", "--n", "x")[0] == 1
    # a sign-alternating series has no fit window: numerical failure
    bad = tmp_path / "bad.csv"
    bad.write_text("x,value\n" + "".join(f"{x},{(-1) ** x}\n" for x in range(1, 12)))
    assert run(tmp_path, "c", "fit", "powerlaw", "--data", str(bad))[0] == 2
    assert "error" in capsys.readouterr().err


def test_config_file_and_precedence(tmp_path):
    cfg = tmp_path / "a.ini"
    cfg.write_text("[thirring anomalies]\nlambda = 0.1\nxi = 0.25\n")
    p = resolve_params(("thirring", "anomalies"), cfg, {"xi": "0.75"})
    assert p == {"lambda": 0.1, "xi": 0.75, "eta_plus": 0.0}
    cfg.write_text("lambda = 0.1\nmass = 1\n")
    with pytest.raises(ContractViolation, match="mass"):
        resolve_params(("thirring", "anomalies"), cfg, {})
    code, _ = run(tmp_path, "d", "thirring", "anomalies", "--config", str(cfg))
    assert code == 1


def test_manifest_echoes_parameters(tmp_path):
    code, out = run(tmp_path, "m", "ising", "exact", "--L", "16", "--beta", "0.4")
    man = json.loads((out / "manifest.json").read_text())
    assert code == 0
    assert set(man["params"]) == set(SCHEMAS[("ising", "exact")])
    assert man["params"]["beta"] == 0.4 and "timestamp" in man
    assert "timestamp" not in (out / "result.json").read_text()


def test_csv_format(tmp_path):
    _, out = run(tmp_path, "e", "ising", "exact", "--L", "16", "--beta", "0.4")
    lines = (out / "exact.csv").read_text().splitlines()
    assert lines[0] == "x,value"
    x, v = lines[1].split(",")
    mant = v.split("e")[0].lstrip("-")
    assert x == "1" and len(mant.replace(".", "")) == 17


def test_replay_is_byte_identical(tmp_path):
    args = ["mc", "run", "--L", "16", "--K", "0.05", "--sweeps", "600", "--thermalization", "100",
            "--chains", "2", "--seed", "99"]
    _, a = run(tmp_path, "r1", *args)
    code = main([*args, "--out", str(tmp_path / "r2"), "--threads", "2"])
    b = tmp_path / "r2"
    assert code == 0
    for f in ("result.json", "correlators.csv", "jackknife.csv"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_kadanoff_report_free_fermion_fixture(tmp_path):
    code, out = run(tmp_path, "k", "report", "kadanoff", "--data", str(DATA / "correlators.csv"),
                    "--reference", str(DATA / "exact.csv"))
    assert code == 0
    r = result(out)
    assert abs(r["product"] - 1.0) <= 2 * r["product_stderr"]
    assert r["fits"]["plus_Oplus"]["window"][0] >= 4


def test_fit_powerlaw_on_exact_reference(tmp_path):
    code, out = run(tmp_path, "f", "fit", "powerlaw", "--data", str(DATA / "exact.csv"),
                    "--r-floor", "2")
    assert code == 0
    assert -2.5 < result(out)["fit"]["exponent"] < -1.9
