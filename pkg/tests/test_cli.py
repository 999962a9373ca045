from __future__ import annotations

import argparse
import csv
import json

import numpy as np
import pytest

from bubbly_honeycomb import cli
from bubbly_honeycomb.capacitance import asymptotic_bands
from bubbly_honeycomb.errors import ConfigError
from bubbly_honeycomb.lattice import build_geometry, named_point


@pytest.fixture(autouse=True)
def _no_env(monkeypatch):
    monkeypatch.delenv(cli.OUTPUT_ENV, raising=False)


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_defaults_are_dilute_case():
    rc = cli.RunConfig()
    assert (rc.radius, rc.delta, rc.v, rc.vb) == (0.02, 1 / 9000, 1.0, 1.0)
    assert rc.lattice_constant == pytest.approx(2 * np.sqrt(3))
    assert rc.dilute


def test_config_file_and_overrides(tmp_path, monkeypatch):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\nradius = 0.2\ndelta = 1e-3\npointsPerSegment = 7\nn-scan = 80\n")
    args = cli.make_parser().parse_args(["bands", "--config", str(f), "--delta", "0.002"])
    rc = cli.build_run_config(args)
    assert (rc.radius, rc.delta, rc.points_per_segment, rc.n_scan) == (0.2, 0.002, 7, 80)
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert cli.build_run_config(args).output_path == str(tmp_path / "env")
    args = cli.make_parser().parse_args(["bands", "--config", str(f), "--output", "flag"])
    assert cli.build_run_config(args).output_path == "flag"


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("radius = 0.02\nfoo = 1\n")
    assert cli.main(["capacitance", "--config", str(bad)]) == cli.EXIT_CONFIG
    bad.write_text("radius 0.02\n")
    assert cli.main(["capacitance", "--config", str(bad)]) == cli.EXIT_CONFIG
    bad.write_text("n_scan = many\n")
    assert cli.main(["capacitance", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["capacitance", "--config", str(tmp_path / "missing.cfg")]) == cli.EXIT_CONFIG


@pytest.mark.parametrize("flags", [["--radius", "-1"], ["--n-scan", "10"], ["--radius", "1.5"], ["--bogus"]])
def test_invalid_flags(flags, tmp_path):
    assert cli.main(["capacitance", "--output", str(tmp_path), *flags]) == cli.EXIT_CONFIG


def test_path_parsing():
    g = build_geometry()
    pts = cli.parse_path(g, "G, k ,0.5:-0.25")
    np.testing.assert_array_equal(pts[1], g.k_point)
    np.testing.assert_array_equal(pts[2], [0.5, -0.25])
    with pytest.raises(ConfigError):
        cli.parse_path(g, "1:2:3")
    with pytest.raises(ConfigError):
        cli.parse_path(g, " , ")


def test_bands_bad_symbol(tmp_path, capsys):
    assert cli.main(["bands", "--path", "M,Q,K", "--output", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "G, K, M" in capsys.readouterr().err


def test_bands_csv_and_plot(tmp_path):
    args = ["bands", "--path", "K,M", "--points-per-segment", "3", "--workers", "1"]
    assert cli.main([*args, "--output", str(tmp_path / "a")]) == cli.EXIT_OK
    assert cli.main([*args, "--output", str(tmp_path / "b")]) == cli.EXIT_OK
    text = (tmp_path / "a" / "bands.csv").read_text()
    assert text.splitlines()[0] == "arclength,alpha_x,alpha_y,band_index,omega,sigma_min,multiplicity"
    assert text == (tmp_path / "b" / "bands.csv").read_text()
    rows = _rows(tmp_path / "a" / "bands.csv")
    assert len(rows) == 6
    assert [r["band_index"] for r in rows] == ["1", "2"] * 3
    assert rows[0]["multiplicity"] == "2" and rows[0]["omega"] == rows[1]["omega"]
    assert float(rows[2]["omega"]) < float(rows[3]["omega"])
    gp = (tmp_path / "a" / "bands.gp").read_text()
    assert "'bands.csv'" in gp and '"K" 0.0' in gp


def test_bands_numerical_failure(tmp_path, capsys, monkeypatch):
    # a window below the bands finds nothing: exit 3 with WARN lines
    monkeypatch.setattr(cli, "default_omega_max", lambda *a: 0.05)
    code = cli.main(["bands", "--path", "K,M", "--points-per-segment", "2", "--output", str(tmp_path), "--workers", "1"])
    assert code == cli.EXIT_NUMERICAL
    assert any(line.startswith("WARN") for line in capsys.readouterr().err.splitlines())


def test_capacitance_path(tmp_path):
    assert cli.main(["capacitance", "--path", "M,K", "--points-per-segment", "3", "--output", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "capacitance.csv")
    assert list(rows[0]) == ["alpha_x", "alpha_y", "c11", "re_c12", "im_c12", "lambda1", "lambda2",
                             "omega1_asym", "omega2_asym"]
    g = build_geometry()
    rc = cli.RunConfig()
    for r in rows:
        assert float(r["lambda1"]) <= float(r["lambda2"])
        a = np.array([float(r["alpha_x"]), float(r["alpha_y"])])
        w = asymptotic_bands(g, rc.crystal(), rc.truncation(), a)
        assert (float(r["omega1_asym"]), float(r["omega2_asym"])) == w
    k = rows[-1]
    np.testing.assert_allclose([float(k["alpha_x"]), float(k["alpha_y"])], named_point(g, "K"))
    c11 = float(k["c11"])
    assert abs(float(k["re_c12"])) <= 1e-8 * c11 and abs(float(k["im_c12"])) <= 1e-8 * c11


def test_capacitance_grid(tmp_path):
    assert cli.main(["capacitance", "--grid", "3", "--output", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "capacitance.csv")
    # the centre of the odd grid is Gamma and is skipped
    assert len(rows) == 8
    assert cli.main(["capacitance", "--grid", "0", "--output", str(tmp_path)]) == cli.EXIT_CONFIG


def test_probe_green(capsys):
    assert cli.main(["probe-green", "--alpha", "K", "--k", "0.1", "--x", "1:0"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("G = ")
    resid = float(out.split("eta_residual = ")[1])
    assert resid <= 1e-11
    assert cli.main(["probe-green", "--x", "oops"]) == cli.EXIT_CONFIG
    assert cli.main(["probe-green", "--alpha", "G", "--k", "0"]) == cli.EXIT_CONFIG


def test_dirac_rejects_zero_delta(tmp_path):
    assert cli.main(["dirac", "--delta", "0", "--output", str(tmp_path)]) == cli.EXIT_CONFIG


def test_dirac_report(tmp_path, capsys):
    code = cli.main(["dirac", "--output", str(tmp_path)])
    report = json.loads((tmp_path / "dirac.json").read_text())
    for key in ("omega_star_asymptotic", "omega_star_fit", "lambda_asymptotic", "lambda_fit", "c_abs",
                "linear_residual", "degeneracy_gap"):
        assert key in report
    assert report["degeneracy_gap"] / report["omega_star_fit"] < 1e-6
    assert report["slope_tolerance"] == 0.05
    assert code == (cli.EXIT_OK if report["passed"] else cli.EXIT_NUMERICAL)
    if code:
        assert "WARN" in capsys.readouterr().err


@pytest.mark.slow
def test_dirac_non_dilute(tmp_path):
    assert cli.main(["dirac", "--radius", "0.2", "--delta", "0.001", "--output", str(tmp_path)]) == cli.EXIT_OK
    report = json.loads((tmp_path / "dirac.json").read_text())
    assert report["slope_tolerance"] == 0.15 and "relaxed" in report["regime"]


def test_selftest_default(capsys):
    assert cli.main(["selftest"]) == cli.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)


def test_selftest_loose_tolerance(capsys):
    assert cli.main(["selftest", "--greens-tol", "1e-2"]) == cli.EXIT_SELFTEST
    assert any(line.startswith("FAIL") for line in capsys.readouterr().out.splitlines())


def test_selftest_bad_quadrature():
    assert cli.main(["selftest", "--quadrature-points", "8"]) == cli.EXIT_CONFIG


def test_help_exit_zero():
    assert cli.main(["--help"]) == 0


def test_parser_namespace():
    ns = cli.make_parser().parse_args(["selftest", "--radius", "0.1"])
    assert isinstance(ns, argparse.Namespace) and ns.radius == 0.1
