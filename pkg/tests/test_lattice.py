from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bubbly_honeycomb.errors import ConfigError
from bubbly_honeycomb.lattice import (
    DEFAULT_LATTICE_CONSTANT,
    build_geometry,
    k_path,
    named_point,
    rotate_dual,
    symmetry_points,
)

S3 = math.sqrt(3.0)


def test_reference_lattice_vectors(geom):
    np.testing.assert_allclose(geom.l1, [3, S3], atol=1e-14)
    np.testing.assert_allclose(geom.l2, [3, -S3], atol=1e-14)
    np.testing.assert_allclose(geom.alpha1, 2 * np.pi * np.array([1 / 6, 1 / (2 * S3)]), atol=1e-14)
    np.testing.assert_allclose(geom.alpha1, [1.047198, 1.813799], atol=1e-6)


@given(st.floats(0.1, 20.0))
def test_biorthogonality(a):
    g = build_geometry(a)
    gram = np.array([[g.alpha1 @ g.l1, g.alpha1 @ g.l2], [g.alpha2 @ g.l1, g.alpha2 @ g.l2]])
    np.testing.assert_allclose(gram, 2 * np.pi * np.eye(2), atol=1e-13 * 2 * np.pi)


@given(st.floats(0.1, 20.0))
def test_centres_and_area(a):
    g = build_geometry(a)
    np.testing.assert_allclose(g.x1, (g.l1 + g.l2) / 3, atol=1e-13 * a)
    np.testing.assert_allclose(g.x2, 2 * (g.l1 + g.l2) / 3, atol=1e-13 * a)
    assert g.cell_area == pytest.approx(abs(g.l1[0] * g.l2[1] - g.l1[1] * g.l2[0]), rel=1e-14)


def test_cell_area_value(geom):
    assert abs(geom.cell_area - 6 * S3) <= 1e-12
    assert geom.cell_area == pytest.approx(10.392305, abs=1e-6)


def test_nearest_neighbour_distance(geom):
    # the lattice vectors are authoritative; the centre spacing is 2
    m = np.array([i * geom.l1 + j * geom.l2 for i in range(-2, 3) for j in range(-2, 3)])
    brute = np.min(np.linalg.norm(geom.x2 - geom.x1 - m, axis=1))
    assert brute == pytest.approx(2.0, abs=1e-14)
    assert geom.nearest_neighbor_distance == pytest.approx(2.0, abs=1e-14)
    assert geom.min_lattice_distance == pytest.approx(DEFAULT_LATTICE_CONSTANT, rel=1e-14)


@pytest.mark.parametrize("a", [0.0, -1.0, float("nan")])
def test_bad_lattice_constant(a):
    with pytest.raises(ConfigError):
        build_geometry(a)


def test_symmetry_points(geom):
    G, K, M = symmetry_points(geom)
    np.testing.assert_array_equal(G, [0, 0])
    np.testing.assert_allclose(K, [1.047198, 0.604600], atol=1e-6)
    np.testing.assert_allclose(M, [0.523599, 0.906900], atol=1e-6)
    np.testing.assert_allclose(K, (2 * geom.alpha1 + geom.alpha2) / 3, atol=1e-15)


def test_rotation(geom):
    np.testing.assert_array_equal(rotate_dual(geom, [0.0, 0.0]), [0, 0])
    K = geom.k_point
    diff = geom.dual_coordinates(rotate_dual(geom, K) - K)
    np.testing.assert_allclose(diff, np.round(diff), atol=1e-12)
    assert geom.same_modulo_dual(rotate_dual(geom, K), K)
    v = np.array([0.3, -0.7])
    np.testing.assert_allclose(rotate_dual(geom, rotate_dual(geom, rotate_dual(geom, v))), v, atol=1e-14)
    ang = -2 * np.pi / 3
    np.testing.assert_allclose(
        rotate_dual(geom, v), [math.cos(ang) * v[0] - math.sin(ang) * v[1], math.sin(ang) * v[0] + math.cos(ang) * v[1]]
    )


def test_named_point_errors(geom):
    np.testing.assert_array_equal(named_point(geom, "k"), geom.k_point)
    with pytest.raises(ConfigError, match="G, K, M"):
        named_point(geom, "Q")


def test_reduce_to_zone(geom):
    v = geom.k_point + 3 * geom.alpha1 - 2 * geom.alpha2
    r = geom.reduce_to_zone(v)
    s = geom.dual_coordinates(r)
    assert np.all((s >= 0) & (s < 1))
    assert geom.same_modulo_dual(r, v)


def _mgkm(g):
    return [g.m_point, g.gamma_point, g.k_point, g.m_point]


def test_path_two_points(geom):
    p = k_path(geom, _mgkm(geom), 2)
    assert len(p) == 4
    np.testing.assert_array_equal(p[0], geom.m_point)
    np.testing.assert_array_equal(p[-1], geom.m_point)
    np.testing.assert_array_equal(p[2], geom.k_point)
    assert np.linalg.norm(p[1]) == pytest.approx(geom.default_gamma_offset, rel=1e-12)


def test_path_counting(geom):
    p = k_path(geom, _mgkm(geom), 30)
    assert len(p) == 88
    assert np.all(np.diff(p.arclength) > 0)
    assert min(np.linalg.norm(p.points, axis=1)) >= geom.default_gamma_offset * (1 - 1e-12)
    # the closed path revisits M only at its end
    assert len({tuple(np.round(x, 12)) for x in p.points[:-1]}) == 87


def test_degenerate_path(geom):
    p = k_path(geom, [geom.k_point, geom.k_point], 5)
    for x in p:
        np.testing.assert_array_equal(x, geom.k_point)


def test_path_errors(geom):
    with pytest.raises(ConfigError):
        k_path(geom, [], 5)
    with pytest.raises(ConfigError):
        k_path(geom, _mgkm(geom), 1)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_dual_coordinates_roundtrip(s, t):
    g = build_geometry(DEFAULT_LATTICE_CONSTANT)
    v = s * g.alpha1 + t * g.alpha2
    np.testing.assert_allclose(g.dual_coordinates(v), [s, t], atol=1e-14)
