import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reflected_morse.errors import DegenerateMetricError, OffSurfaceError, PreconditionError
from reflected_morse.geometry import (ChartGeometry, _christoffel_from, check_c1_matching, christoffel,
                                      christoffel_derivs, connection_data, hess_v_mixed, make_chart,
                                      make_hypersurface, make_potential, polynomial_from_terms,
                                      second_fundamental_form, sectional_curvature, shape_operator,
                                      split_normal_tangent, unit_normal)
from reflected_morse.polynomial import Polynomial

coord = st.floats(-0.9, 0.9)
colat = st.floats(0.3, 2.8)


def _generic(geom):
    """Same metric without closed-form helpers, so every derivative goes through the generic path."""
    return ChartGeometry(geom.dim, geom.metric, geom.metric_derivs, geom.metric_hess)


PHI = polynomial_from_terms(2, [[0.3, [1, 0]], [-0.2, [0, 2]], [0.15, [2, 1]], [0.1, [0, 0]]])


@given(colat, st.floats(-3, 3))
def test_sphere_christoffel_closed_form(theta, lam):
    gam = christoffel(make_chart("sphere-polar"), [theta, lam])
    assert gam[0, 1, 1] == pytest.approx(-np.sin(theta) * np.cos(theta), abs=1e-12)
    assert gam[1, 0, 1] == pytest.approx(np.cos(theta) / np.sin(theta), abs=1e-12)
    assert gam[1, 1, 0] == pytest.approx(gam[1, 0, 1], abs=1e-15)
    assert abs(gam[0, 0, 0]) + abs(gam[1, 1, 1]) + abs(gam[0, 0, 1]) < 1e-14


@pytest.mark.parametrize("name,params,x", [
    ("sphere-polar", {"radius": 1.7}, [1.1, 0.4]),
    ("polar-flat", {}, [0.8, 2.0]),
    ("conformal", {"phi": PHI}, [0.2, -0.4]),
])
def test_closed_form_frames_match_generic_formulas(name, params, x):
    geom = make_chart(name, **params)
    fast = connection_data(geom, x)
    slow = connection_data(_generic(geom), x)
    for key in ("g", "ginv", "dg", "gam"):
        assert np.allclose(fast[key], slow[key], atol=1e-12)
    assert np.allclose(fast["dgam"], christoffel_derivs(_generic(geom), x), atol=1e-10)


@given(colat, st.floats(0.5, 3.0))
def test_sphere_sectional_curvature(theta, radius):
    geom = make_chart("sphere-polar", radius=radius)
    k = sectional_curvature(geom, [theta, 0.2], np.array([1.0, 0.0]), np.array([0.3, 1.0]))
    assert k == pytest.approx(1 / radius ** 2, rel=1e-8)


@given(coord, coord)
def test_conformal_curvature_matches_laplacian(x, y):
    # K = -exp(-2 phi) * laplacian(phi) for g = exp(2 phi) |dx|^2
    geom = make_chart("conformal", phi=PHI)
    p = np.array([x, y])
    k = sectional_curvature(geom, p, np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    lap = np.trace(PHI.hess(p))
    assert k == pytest.approx(-np.exp(-2 * PHI(p)) * lap, abs=1e-9)


def test_riemann_sign_convention_on_sphere():
    from reflected_morse.geometry import riemann

    geom = make_chart("sphere-polar")
    x = np.array([np.pi / 2, 0.0])
    u, v = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert np.allclose(riemann(geom, x, u, v, u), v, atol=1e-8)


def test_flat_charts_have_zero_curvature():
    k = sectional_curvature(make_chart("polar-flat"), [1.3, 0.7], np.array([1.0, 0.2]), np.array([0.0, 1.0]))
    assert abs(k) < 1e-8


def test_polar_chart_singularity_raises():
    with pytest.raises(DegenerateMetricError):
        connection_data(make_chart("polar-flat"), [0.0, 1.0])
    with pytest.raises(DegenerateMetricError):
        christoffel(ChartGeometry(2, lambda x: np.diag([1.0, -1.0])), [0.0, 0.0])


@given(st.floats(0, 2 * np.pi))
def test_disk_normal_points_inward_with_unit_curvature(a):
    geom = make_chart("euclidean")
    disk = make_hypersurface("circle", 2, radius=1.0, boundary=True)
    y = np.array([np.cos(a), np.sin(a)])
    n = unit_normal(geom, disk, y)
    assert np.allclose(n, -y, atol=1e-14)
    t = np.array([-np.sin(a), np.cos(a)])
    assert second_fundamental_form(geom, disk, y, t, t) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(shape_operator(geom, disk, y, t), t, atol=1e-12)


@given(st.floats(0.3, 3.0), st.floats(0, 2 * np.pi))
def test_circle_curvature_scales_with_radius(r, a):
    geom = make_chart("euclidean")
    circ = make_hypersurface("circle", 2, radius=r)
    y = r * np.array([np.cos(a), np.sin(a)])
    t = np.array([-np.sin(a), np.cos(a)])
    assert second_fundamental_form(geom, circ, y, t, t) == pytest.approx(1 / r, rel=1e-10)


def test_hyperplane_is_totally_geodesic():
    geom = make_chart("euclidean")
    wall = make_hypersurface("hyperplane", 2, axis=0, offset=0.3)
    assert second_fundamental_form(geom, wall, [0.3, 0.5], [0.0, 1.0], [0.0, 1.0]) == 0.0


@given(colat)
def test_sphere_latitude_circle_geodesic_curvature(theta0):
    # the parallel theta = theta0 has geodesic curvature cot(theta0) on the unit sphere
    geom = make_chart("sphere-polar")
    lat = make_hypersurface("hyperplane", 2, axis=0, offset=theta0)
    y = np.array([theta0, 0.4])
    t = np.array([0.0, 1.0 / np.sin(theta0)])
    ii = second_fundamental_form(geom, lat, y, t, t)
    assert abs(ii) == pytest.approx(abs(np.cos(theta0) / np.sin(theta0)), abs=1e-7)


def test_normal_has_unit_length_in_curved_metric():
    geom = make_chart("conformal", phi=PHI)
    circ = make_hypersurface("circle", 2, radius=0.7)
    y = 0.7 * np.array([np.cos(0.4), np.sin(0.4)])
    n = unit_normal(geom, circ, y)
    assert geom.inner(y, n, n) == pytest.approx(1.0, abs=1e-14)


def test_split_normal_tangent_requires_point_on_surface():
    geom = make_chart("euclidean")
    disk = make_hypersurface("circle", 2)
    perp, top = split_normal_tangent(geom, disk, [0.0, 1.0], [1.0, 2.0])
    assert np.allclose(perp, [0.0, 2.0]) and np.allclose(top, [1.0, 0.0])
    with pytest.raises(OffSurfaceError):
        split_normal_tangent(geom, disk, [0.0, 0.5], [1.0, 0.0])
    with pytest.raises(PreconditionError):
        shape_operator(geom, disk, [0.0, 1.0], [0.0, 1.0])


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(-2, 2), st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=5),
       coord, coord)
def test_polynomial_derivatives_against_differences(terms, x, y):
    poly = Polynomial(2, tuple((c, (a, b)) for c, a, b in terms))
    p = np.array([x, y])
    h = 1e-5
    e = np.eye(2)
    fd_grad = np.array([(poly(p + h * e[i]) - poly(p - h * e[i])) / (2 * h) for i in range(2)])
    fd_hess = np.array([(poly.grad(p + h * e[i]) - poly.grad(p - h * e[i])) / (2 * h) for i in range(2)])
    assert np.allclose(poly.grad(p), fd_grad, atol=1e-7)
    assert np.allclose(poly.hess(p), fd_hess, atol=1e-6)


def test_polynomial_rejects_bad_exponents():
    with pytest.raises(ValueError):
        Polynomial(2, ((1.0, (1,)),))
    with pytest.raises(ValueError):
        Polynomial(2, ((1.0, (1, -1)),))


def test_harmonic_hessian_is_identity():
    geom = make_chart("euclidean")
    pot = make_potential("harmonic", 2, k=2.5)
    assert np.allclose(hess_v_mixed(geom, pot, [0.3, -0.2]), 2.5 * np.eye(2))


def test_covariant_hessian_in_polar_coordinates():
    # V = r^2 / 2 written in polar coordinates has covariant Hessian = identity
    geom = make_chart("polar-flat")
    pot = make_potential("polynomial", 2, poly=[[0.5, [2, 0]]])
    assert np.allclose(hess_v_mixed(geom, pot, [1.4, 0.3]), np.eye(2), atol=1e-12)


def test_c1_matching_detects_gradient_mismatch():
    wall = make_hypersurface("hyperplane", 2, axis=0)
    rng = np.random.default_rng(0)
    plus = polynomial_from_terms(2, [[0.5, [2, 0]]])
    good = polynomial_from_terms(2, [[0.5, [2, 0]], [1.0, [3, 0]]])
    bad = polynomial_from_terms(2, [[0.5, [2, 0]], [0.1, [1, 0]]])
    worst, ok = check_c1_matching(wall, plus, good, rng)
    assert ok and worst < 1e-12
    worst, ok = check_c1_matching(wall, plus, bad, rng)
    assert not ok and worst == pytest.approx(0.1)


def test_piecewise_potential_uses_side_hessians():
    wall = make_hypersurface("hyperplane", 2, axis=0)
    pot = make_potential("piecewise-polynomial", 2, wall, plus=[[0.5, [2, 0]]], minus=[[0.5, [2, 0]], [1.0, [3, 0]]])
    assert pot.v([-1.0, 0.0]) == pytest.approx(-0.5)
    assert pot.hess([-1.0, 0.0], -1)[0, 0] == pytest.approx(-5.0)
    assert pot.hess([-1.0, 0.0], 1)[0, 0] == pytest.approx(1.0)


def test_unknown_registry_names():
    with pytest.raises(KeyError):
        make_chart("torus")
    with pytest.raises(KeyError):
        make_hypersurface("cone")
    with pytest.raises(KeyError):
        make_potential("coulomb")


def test_christoffel_from_is_symmetric_in_lower_indices():
    geom = make_chart("conformal", phi=PHI)
    d = connection_data(geom, [0.1, 0.2])
    gam = _christoffel_from(d["ginv"], d["dg"])
    assert np.allclose(gam, np.swapaxes(gam, 1, 2))
