import json

import numpy as np
import pytest

from hierflow.cli import (EXIT_ACCEPT, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, kappa_surface, main, read_csv,
                          sigma2_jump, sigma2_scan, vstar_profile)
from hierflow.model import beta_critical


def run(argv, tmp_path, name="out.csv"):
    out = tmp_path / name
    code = main(argv + ["--out", str(out)])
    return code, out.read_text() if out.exists() else ""


def test_flow_command_header(tmp_path):
    code, text = run(["flow", "--beta", "20", "--n", "5"], tmp_path)
    assert code == EXIT_OK
    lines = text.splitlines()
    assert lines[0].startswith("# hierflow ")
    params = json.loads(lines[1][len("# params: "):])
    assert params["beta"] == 20.0 and params["n"] == 5
    cols, rows = read_csv(text)
    assert cols[0] == "k" and len(rows) == 6


def test_outputs_are_reproducible(tmp_path):
    a = run(["sample", "--n", "3", "--samples", "3000", "--seed", "5"], tmp_path, "a.csv")[1]
    b = run(["sample", "--n", "3", "--samples", "3000", "--seed", "5"], tmp_path, "b.csv")[1]
    assert a == b
    c = run(["kappa-surface", "--steps", "4", "--alpha-steps", "3", "--threads", "2"], tmp_path, "c.csv")[1]
    d = run(["kappa-surface", "--steps", "4", "--alpha-steps", "3"], tmp_path, "d.csv")[1]
    assert c == d


def test_usage_errors(tmp_path, capsys):
    assert main(["flow", "--bogus"]) == EXIT_USAGE
    assert main(["nope"]) == EXIT_USAGE
    bad = tmp_path / "bad.ini"
    bad.write_text("[model]\nbeta = abc\n")
    assert main(["flow", "--config", str(bad)]) == EXIT_USAGE
    assert "bad configuration" in capsys.readouterr().err
    assert main(["flow", "--config", str(tmp_path / "missing.ini")]) == EXIT_USAGE
    assert main(["fixed-point", "--beta", "30", "--theta", "0.6"]) == EXIT_USAGE


def test_config_file_with_override(tmp_path):
    cfg = tmp_path / "m.ini"
    cfg.write_text("[model]\nb = 2\nbeta = 15\nn = 3\nmeasure = sine_gordon(1)\n")
    code, text = run(["covariance", "--config", str(cfg), "--n", "4"], tmp_path)
    assert code == EXIT_OK
    assert '"n": 4' in text.splitlines()[1] and "sine_gordon(1)" in text.splitlines()[1]


def test_fixed_point_json(tmp_path):
    code, text = run(["fixed-point", "--theta", "0.55"], tmp_path, "fp.json")
    assert code == EXIT_OK
    d = json.loads(text)
    assert d["result"]["residual"] < 1e-10 and d["result"]["b_theta"] == pytest.approx(1.1)


def test_charge_and_oracle_commands(tmp_path):
    code, text = run(["charge", "--beta", "20", "--n", "4", "--alpha", "0.2"], tmp_path)
    assert code == EXIT_OK and len(read_csv(text)[1]) == 5
    code, text = run(["oracle-check", "--cache", str(tmp_path / "cache")], tmp_path, "o.csv")
    assert code == EXIT_OK
    assert max(r[-1] for r in [row for row in read_csv_rows(text)]) < 1e-4
    code, _ = run(["oracle-check", "--tol", "0"], tmp_path, "o2.csv")
    assert code in (EXIT_OK, EXIT_ACCEPT)


def read_csv_rows(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")][1:]
    return [[float(x) for x in ln.split(",")[1:]] for ln in lines]


def test_sample_field_command(tmp_path):
    code, text = run(["sample", "--n", "3", "--field", "--seed", "2"], tmp_path)
    assert code == EXIT_OK
    assert len(read_csv(text)[1]) == 8


def test_sigma2_scan_examples():
    rows = sigma2_scan(2, (20.0, 27.0), 8)
    assert all(r[1] == 1 / r[0] for r in rows)
    rows = sigma2_scan(2, (38.0, 40.0), 3)
    assert rows[-1][0] == 40.0 and rows[-1][1] < 1 / 40


def test_sigma2_jump_on_exact_data():
    bc = beta_critical(2)
    betas = np.linspace(bc - 1, bc + 2, 61)
    sig = np.where(betas <= bc, 1 / betas, 1 / betas - 0.0073 * (betas - bc) + 1e-4 * (betas - bc) ** 2)
    assert sigma2_jump(betas, sig, 2) == pytest.approx(0.0073, rel=1e-8)


def test_kappa_surface_cells():
    rows = kappa_surface(2, (25.0, 35.0), (0.0, 0.3), steps=2, alpha_steps=2)
    by = {(r[0], r[1]): r for r in rows}
    bc = beta_critical(2)
    assert by[(0.0, 25.0)][5] == 0 and by[(0.0, 35.0)][5] == 0
    assert by[(0.3, 25.0)][5] == 4 * bc * 0.09 / 25 and by[(0.3, 25.0)][4] == 0
    assert by[(0.3, 35.0)][5] < 4 * bc * 0.09 / 35


def test_vstar_profile_examples():
    z, curves, status = vstar_profile(2, (0.501, 0.45))
    c = curves[0.501]
    assert np.max(np.abs(c - 1)) < 0.07
    assert np.allclose(c, np.roll(c[::-1], 1), atol=1e-12)
    assert curves[0.45] is None and "b*theta" in status[0.45]


def test_vstar_command_reports_invalid_theta(tmp_path):
    code, text = run(["vstar-profile", "--thetas", "0.6,0.4"], tmp_path)
    assert code == EXIT_NUMERIC
    assert "exp_neg_vstar_0.4" in text


def test_all_figures_small(tmp_path):
    out = tmp_path / "figs" / "nested"
    code = main(["all-figures", "--out", str(out), "--steps", "60", "--surface-steps", "6"])
    assert code == EXIT_OK
    m = json.loads((out / "manifest.json").read_text())
    assert m["all_pass"] and {o["file"] for o in m["outputs"]} == {
        "sigma2_scan.csv", "kappa_surface.csv", "vstar_profile.csv"}
