from __future__ import annotations

import numpy as np
import pytest

from bubbly_honeycomb.bands import BandPoint, band_sweep, cone_fit, default_omega_max, find_bands, sigma_min
from bubbly_honeycomb.errors import ConeMissingError, ConfigError
from bubbly_honeycomb.lattice import rotate_dual
from bubbly_honeycomb.operators import TruncationParams, assemble_A

OMEGA_STAR = 0.3480828602965049


@pytest.fixture(scope="module")
def at_k(geom, dilute):
    return find_bands(geom, *dilute, geom.k_point, 3 * OMEGA_STAR)


@pytest.fixture(scope="module")
def at_m(geom, dilute):
    return find_bands(geom, *dilute, geom.m_point, 3 * OMEGA_STAR)


def test_default_window(geom, dilute):
    assert default_omega_max(geom, *dilute) == pytest.approx(3 * OMEGA_STAR, rel=1e-10)


def test_double_root_at_k(at_k):
    assert at_k.frequencies and at_k.multiplicity_flags[0] == 2
    assert len(at_k.frequencies) == 1
    v = at_k.band_values()
    assert len(v) == 2 and v[0] == v[1]
    assert at_k.sigma_min_at_roots[0] <= at_k.root_threshold
    assert v[0] == pytest.approx(0.3435174338, rel=1e-8)


def test_two_simple_roots_at_m(at_m):
    assert at_m.multiplicity_flags == [1, 1]
    w1, w2 = at_m.frequencies
    assert w1 < w2
    assert w1 == pytest.approx(0.328398, rel=1e-5) and w2 == pytest.approx(0.350648, rel=1e-5)
    assert all(s <= at_m.root_threshold for s in at_m.sigma_min_at_roots)


def test_roots_small_relative_to_operator(geom, dilute, at_m):
    cfg, trunc = dilute
    for w, s in zip(at_m.frequencies, at_m.sigma_min_at_roots):
        norm = np.linalg.norm(assemble_A(geom, cfg, trunc, geom.m_point, w).matrix, 2)
        assert s <= 1e-8 * norm


def test_sigma_min(geom, dilute, at_k):
    cfg, trunc = dilute
    assert sigma_min(geom, cfg, trunc, geom.k_point, 0.2) >= 0
    assert sigma_min(geom, cfg, trunc, geom.k_point, at_k.frequencies[0]) <= at_k.root_threshold
    assert sigma_min(geom, cfg, trunc, geom.k_point, 2 * OMEGA_STAR) > 10 * at_k.root_threshold


def test_band_rows(at_k, at_m):
    assert [r[0] for r in at_k.band_rows()] == [1, 2]
    assert [r[3] for r in at_k.band_rows()] == [2, 2]
    assert [r[0] for r in at_m.band_rows()] == [1, 2]
    assert at_k.ok
    bp = BandPoint(np.zeros(2), 0.0, [], [], [], 0.0, ["error: x"])
    assert not bp.ok and bp.band_values() == []


def test_validation(geom, dilute):
    with pytest.raises(ConfigError):
        find_bands(geom, *dilute, geom.k_point, 1.0, n_scan=10)
    with pytest.raises(ConfigError):
        find_bands(geom, *dilute, geom.k_point, -1.0)
    with pytest.raises(ConfigError):
        find_bands(geom, *dilute, geom.k_point, 2.0, strict_guard=True)


def test_no_roots_diagnostic(geom, dilute):
    bp = find_bands(geom, *dilute, geom.k_point, 0.2)
    assert bp.frequencies == [] and "no roots found" in bp.diagnostics


def test_sweep_records_errors_and_is_deterministic(geom, dilute):
    cfg, trunc = dilute
    path = [geom.m_point, np.array([np.nan, 0.0]), geom.k_point]
    a = band_sweep(geom, cfg, trunc, path, 3 * OMEGA_STAR, arclength=[0.0, 1.0, 2.0], workers=1)
    assert [p.arclength for p in a] == sorted(p.arclength for p in a)
    assert a[1].diagnostics[0].startswith("error") and a[1].frequencies == []
    assert a[0].ok and a[2].ok
    b = band_sweep(geom, cfg, trunc, path, 3 * OMEGA_STAR, arclength=[0.0, 1.0, 2.0], workers=2)
    for p, q in zip(a, b):
        assert p.frequencies == q.frequencies and p.multiplicity_flags == q.multiplicity_flags
        assert p.arclength == q.arclength


def test_rotation_invariance(geom, dilute):
    cfg, trunc = dilute
    for a in (np.array([0.4, 0.3]), 0.5 * (geom.k_point + geom.m_point)):
        base = find_bands(geom, cfg, trunc, a, 3 * OMEGA_STAR).band_values()
        rot = find_bands(geom, cfg, trunc, rotate_dual(geom, a), 3 * OMEGA_STAR).band_values()
        np.testing.assert_allclose(rot, base, rtol=1e-8)


def test_degeneracy_splitting_linear(geom, dilute):
    cfg, trunc = dilute
    K = geom.k_point
    d = geom.alpha1 / np.linalg.norm(geom.alpha1)
    t = 0.01 * np.linalg.norm(K)
    seps = []
    for s in (t, t / 2):
        v = find_bands(geom, cfg, trunc, K + s * d, 3 * OMEGA_STAR).band_values()
        seps.append(v[1] - v[0])
    assert seps[0] / seps[1] == pytest.approx(2.0, rel=0.1)
    assert seps[0] == pytest.approx(2 * 0.0385 * t, rel=0.1)


def test_cone_fit_dilute(geom, dilute):
    cf = cone_fit(geom, *dilute)
    assert cf.window == pytest.approx(0.05 * np.linalg.norm(geom.k_point))
    assert len(cf.radii) == 6 and cf.lower.shape == (2, 6)
    assert cf.degeneracy_gap / cf.omega_star_fit < 1e-6
    assert cf.linear_residual < 0.02
    assert cf.branch_asymmetry < 0.01
    assert cf.direction_spread < 0.02
    assert cf.lambda_plus >= 0 and cf.lambda_minus >= 0
    assert np.all(cf.lower < cf.upper)
    assert cf.lambda_fit == pytest.approx(0.0385148, rel=1e-4)


def test_cone_fit_validation(geom, dilute):
    with pytest.raises(ConfigError):
        cone_fit(geom, *dilute, window=0.1 * np.linalg.norm(geom.k_point))
    with pytest.raises(ConfigError):
        cone_fit(geom, *dilute, n_samples=4)
    with pytest.raises(ConeMissingError):
        cone_fit(geom, *dilute, omega_max=0.2)


@pytest.mark.slow
def test_truncation_robustness_points(geom, dilute):
    cfg, trunc = dilute
    big = TruncationParams.default_for(cfg.radius, multipole_order=trunc.multipole_order + 4)
    for a in (geom.k_point, geom.m_point):
        lo = find_bands(geom, cfg, trunc, a, 3 * OMEGA_STAR).band_values()
        hi = find_bands(geom, cfg, big, a, 3 * OMEGA_STAR).band_values()
        np.testing.assert_allclose(hi, lo, rtol=1e-8)
