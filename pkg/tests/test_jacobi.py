import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reflected_morse.dynamics import EventPolicy, reversed_path, shoot
from reflected_morse.geometry import make_chart, make_hypersurface, make_potential, polynomial_from_terms
from reflected_morse.jacobi import (conjugate_points, endpoint_map, jacobi_jump, jump_residuals, propagate_jacobi,
                                    self_conjugate_ratio, variation_consistency_check)


def _omega(G):
    n = G.shape[0]
    return np.block([[np.zeros((n, n)), G], [-G, np.zeros((n, n))]])


def test_sphere_jacobi_field_is_sine(sphere, zero):
    path = shoot(sphere, None, zero, [np.pi / 2, 0.0], [0.0, 1.0], 3.0)
    field = propagate_jacobi(path, [0.0, 0.0], [1.0, 0.0])
    for t in (0.5, 1.7, 2.9):
        W, DW = field.covariant(t)
        assert W[:, 0] == pytest.approx([np.sin(t), 0.0], abs=1e-9)
        assert DW[:, 0] == pytest.approx([np.cos(t), 0.0], abs=1e-9)


def test_harmonic_jacobi_field_is_sine(euclid):
    path = shoot(euclid, None, make_potential("harmonic", 2), [1.0, 0.0], [0.0, 1.0], 4.0)
    field = propagate_jacobi(path, np.eye(2), np.zeros((2, 2)))
    W, Wd, Wdd = field.sample(np.array([0.3, 2.5]))
    assert np.allclose(W[:, 0, 0], np.cos([0.3, 2.5]), atol=1e-9)
    assert np.allclose(Wdd, -W, atol=1e-8)


def test_unfolded_strip_field_grows_linearly(euclid, strip, zero):
    # reflections off parallel walls act as isometries on the unfolded straight line
    path = shoot(euclid, strip, zero, [0.5, 0.0], [1.0, 0.3], 4.0)
    field = propagate_jacobi(path, [0.0, 0.0], [0.6, 0.8])
    for t in (0.3, 1.9, 3.99):
        W, _ = field.covariant(t)
        assert np.linalg.norm(W) == pytest.approx(t, rel=1e-10)


@pytest.mark.parametrize("path_kind", ["disk", "sphere", "conformal"])
def test_endpoint_map_is_symplectic(path_kind, euclid, sphere, disk, zero):
    if path_kind == "disk":
        path = shoot(euclid, disk, zero, [0.1, 0.2], [0.6, 0.8], 5.0)
    elif path_kind == "sphere":
        path = shoot(sphere, None, zero, [1.0, 0.2], [0.3, 1.0], 2.0)
    else:
        phi = polynomial_from_terms(2, [[0.05, [1, 0]], [-0.04, [0, 2]], [0.03, [1, 1]]])
        path = shoot(make_chart("conformal", phi=phi), disk, zero, [0.2, 0.1], [0.7, 0.6], 4.0)
    M = endpoint_map(path).matrix
    G0 = path.geom.g(path.x0)
    GT = path.geom.g(path.final_state[0])
    assert np.max(np.abs(M.T @ _omega(GT) @ M - _omega(G0))) < 1e-8


def test_harmonic_conjugate_points(euclid):
    path = shoot(euclid, None, make_potential("harmonic", 2), [1.0, 0.0], [0.0, 1.0], 2.5 * np.pi)
    cps = conjugate_points(path)
    assert [c.multiplicity for c in cps] == [2, 2]
    assert np.allclose([c.time for c in cps], [np.pi, 2 * np.pi], atol=1e-8)


def test_sphere_conjugate_points_in_long_arc(sphere, zero):
    path = shoot(sphere, None, zero, [np.pi / 2, 0.0], [0.0, 1.0], 2.5 * np.pi)
    cps = conjugate_points(path)
    assert np.allclose([c.time for c in cps], [np.pi, 2 * np.pi], atol=1e-8)
    assert [c.multiplicity for c in cps] == [1, 1]


@pytest.mark.parametrize("theta_deg,d1", [(0, 1.5), (20, 0.8), (40, 1.2)])
def test_mirror_equation(theta_deg, d1, euclid, disk, zero):
    th = np.radians(theta_deg)
    d2 = 1.0 / (2.0 / np.cos(th) - 1.0 / d1)
    v = np.array([np.cos(th), np.sin(th)])
    x0 = np.array([1.0, 0.0]) - d1 * v
    path = shoot(euclid, disk, zero, x0, v, d1 + d2 + 0.1)
    cps = conjugate_points(path)
    assert len(cps) == 1 and cps[0].time == pytest.approx(d1 + d2, abs=1e-8)


def test_no_conjugate_points_in_flat_strip(euclid, strip, zero):
    path = shoot(euclid, strip, zero, [0.5, 0.0], [1.0, 0.3], 4.0)
    assert conjugate_points(path) == []


def test_self_conjugate_great_circle(sphere, zero):
    path = shoot(sphere, None, zero, [np.pi / 2, 0.0], [0.0, 1.0], 2 * np.pi)
    assert self_conjugate_ratio(path) < 1e-8
    assert conjugate_points(path)[-1].time == pytest.approx(2 * np.pi)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_jump_residuals_on_random_fields(seed):
    geom = make_chart("euclidean")
    disk = make_hypersurface("circle", 2, boundary=True)
    pot = make_potential("harmonic", 2, k=0.5)
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 2 * np.pi)
    path = shoot(geom, disk, pot, 0.3 * rng.uniform(-1, 1, 2), [np.cos(a), np.sin(a)], 4.0)
    res = jump_residuals(propagate_jacobi(path, rng.standard_normal((2, 4)), rng.standard_normal((2, 4))))
    assert max(res.values()) < 1e-8


def test_jump_residuals_in_curved_metric(disk, zero, rng):
    phi = polynomial_from_terms(2, [[0.2, [1, 0]], [-0.1, [0, 2]], [0.1, [2, 1]]])
    path = shoot(make_chart("conformal", phi=phi), disk, zero, [0.2, 0.1], [0.7, 0.6], 4.0)
    assert len(path.events) >= 2
    res = jump_residuals(propagate_jacobi(path, rng.standard_normal((2, 20)), rng.standard_normal((2, 20))))
    assert max(res.values()) < 1e-8


def test_kink_jump_is_identity(euclid):
    wall = make_hypersurface("hyperplane", 2, axis=0)
    path = shoot(euclid, wall, make_potential("harmonic", 2), [0.6, 0.1], [-1.0, 0.4], 3.0,
                 EventPolicy.transmit_all())
    e = path.events[0]
    W, DW = np.array([0.3, -0.2]), np.array([1.0, 0.5])
    Wp, DWp, _ = jacobi_jump(euclid, wall, path.pot, e, W, DW)
    assert np.allclose(Wp, W) and np.allclose(DWp, DW)


def test_reflection_jump_flips_normal_part(euclid, disk, zero):
    path = shoot(euclid, disk, zero, [0.0, 0.0], [1.0, 0.0], 1.5)
    e = path.events[0]
    Wp, DWp, _ = jacobi_jump(euclid, disk, zero, e, np.array([0.4, 0.3]), np.array([0.0, 0.0]))
    # head-on hit of the unit circle: W_perp flips; the tangential part turns into a velocity kick
    assert Wp == pytest.approx([-0.4, 0.3])
    assert DWp[1] == pytest.approx(-2 * 0.3, abs=1e-12)


def test_variation_consistency_is_first_order(sphere, zero):
    path = shoot(sphere, None, zero, [1.2, 0.0], [0.2, 1.0], 3.0)
    W0, DW0 = np.array([0.3, -0.5]), np.array([0.7, 0.2])
    e1 = variation_consistency_check(path, W0, DW0, 1e-4)
    e2 = variation_consistency_check(path, W0, DW0, 5e-5)
    assert e1 < 1e-3
    # a one-sided difference quotient has an O(eps) error
    assert e1 / e2 == pytest.approx(2.0, rel=0.05)


def test_variation_consistency_across_reflections(euclid, disk, zero):
    path = shoot(euclid, disk, zero, [0.1, 0.2], [0.6, 0.8], 3.0)
    assert variation_consistency_check(path, np.array([0.1, 0.0]), np.array([0.0, 0.3]), 1e-5) < 1e-3


def test_conjugate_pairs_survive_time_reversal(euclid, disk, zero):
    # if a(0) and a(t*) are conjugate, the reversed arc from a(t*) is conjugate at t*
    path = shoot(euclid, disk, zero, [0.1, 0.2], [0.6, 0.8], 5.0)
    fwd = conjugate_points(path)
    t_star = fwd[0].time
    x, v = path.state(t_star)
    back = shoot(euclid, disk, zero, x, -v, t_star + 0.2)
    hits = [c for c in conjugate_points(back) if abs(c.time - t_star) < 1e-8]
    assert len(hits) == 1 and hits[0].multiplicity == fwd[0].multiplicity
    # the count with multiplicity, which is the index, is reversal invariant
    rev = conjugate_points(reversed_path(path))
    assert sum(c.multiplicity for c in rev) == sum(c.multiplicity for c in fwd)
