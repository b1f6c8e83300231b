import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reflected_morse.dynamics import shoot
from reflected_morse.errors import InvalidFieldError, RefineNodesError
from reflected_morse.fields import (BumpProfile, CombinedField, FourierProfile, PolynomialProfile, ProfileField,
                                    SineProfile, StackedField, random_admissible_field)
from reflected_morse.index_form import (BC, BrokenJacobiSpace, _nudged_nodes, assemble_index_form, check_admissible,
                                        index_stability_scan, second_variation, second_variation_matrix)
from reflected_morse.jacobi import propagate_jacobi
from reflected_morse.geometry import make_potential


@pytest.fixture(scope="module")
def disk_path():
    from reflected_morse.geometry import make_chart, make_hypersurface

    disk = make_hypersurface("circle", 2, radius=1.0, boundary=True)
    return shoot(make_chart("euclidean"), disk, make_potential("zero", 2), [0.1, 0.2], [0.6, 0.8], 3.0)


@settings(max_examples=25)
@given(st.floats(-3, 3), st.floats(0.1, 4.0), st.sampled_from(["sine", "bump", "signed", "poly", "fourier"]))
def test_profile_derivatives(t, width, kind):
    prof = {
        "sine": SineProfile(2, -1.0, -1.0 + 2 * width),
        "bump": BumpProfile(0.3, width),
        "signed": BumpProfile(0.3, width, signed=True),
        "poly": PolynomialProfile([0.5, -1.0, 0.3, 0.2], -4.0, 4.0),
        "fourier": FourierProfile(3, width, "sin"),
    }[kind]
    if any(abs(t - b) < 1e-3 for b in prof.breakpoints):
        return
    h = 1e-6
    ts = np.array([t - h, t, t + h])
    f, f1, f2 = prof.eval(ts)
    assert f1[1] == pytest.approx((f[2] - f[0]) / (2 * h), abs=1e-6 * max(1.0, abs(f1[1])) + 1e-7)
    assert f2[1] == pytest.approx((f1[2] - f1[0]) / (2 * h), abs=1e-5 * max(1.0, abs(f2[1])) + 1e-6)


def test_signed_bump_flips_sign():
    prof = BumpProfile(1.0, 0.5, signed=True)
    left, _, _ = prof.eval(np.array([1.0]), -1)
    right, _, _ = prof.eval(np.array([1.0]), 1)
    assert left[0] == 1.0 and right[0] == -1.0


def test_field_combinators():
    a = ProfileField(2, 2).add(SineProfile(1, 0, 1), [[1, 0], [0, 1]])
    b = ProfileField(2, 2).add(SineProfile(2, 0, 1), [[0, 1], [1, 1]])
    ts = np.array([0.2, 0.7])
    s = (a + b).sample(ts)[0]
    assert np.allclose(s, a.sample(ts)[0] + b.sample(ts)[0])
    assert StackedField(a, b).count == 4
    c = CombinedField(StackedField(a, b), [[1, 0, 2, 0]])
    assert np.allclose(c.sample(ts)[0][:, 0], a.sample(ts)[0][:, 0] + 2 * b.sample(ts)[0][:, 0])
    assert np.allclose(a.scaled(3.0).select(1).sample(ts)[0][:, 0], 3 * a.sample(ts)[0][:, 1])


def test_random_fields_are_admissible(disk_path, rng):
    check_admissible(disk_path, random_admissible_field(disk_path, rng, 5), BC.FIXED)
    periodic = random_admissible_field(disk_path, rng, 5, bc="periodic")
    check_admissible(disk_path, periodic, BC.PERIODIC)
    with pytest.raises(InvalidFieldError):
        check_admissible(disk_path, periodic, BC.FIXED)


def test_normal_component_must_flip(euclid, strip, zero):
    path = shoot(euclid, strip, zero, [0.5, 0.0], [1.0, 0.3], 1.0)
    across = ProfileField(2, 1).add(SineProfile(1, 0.0, 1.0), [[1.0, 0.0]])
    along = ProfileField(2, 1).add(SineProfile(1, 0.0, 1.0), [[0.0, 1.0]])
    with pytest.raises(InvalidFieldError):
        check_admissible(path, across, BC.FIXED)
    check_admissible(path, along, BC.FIXED)


def test_flat_strip_second_variation_closed_form(euclid, strip, zero):
    # Z = sin(pi t / T) along the walls: J'' = integral |Z'|^2 = pi^2 / (2 T)
    T = 3.0
    path = shoot(euclid, strip, zero, [0.5, 0.0], [1.0, 0.3], T)
    Z = ProfileField(2, 1).add(SineProfile(1, 0.0, T), [[0.0, 1.0]])
    assert second_variation(path, Z, Z) == pytest.approx(np.pi ** 2 / (2 * T), rel=1e-12)


@pytest.mark.parametrize("T", [1.0, 2.5, 4.0])
def test_sphere_second_variation_closed_form(sphere, zero, T):
    # along the equator, Z = sin(pi t / T) d_theta gives (pi^2 / T^2 - 1) T / 2
    path = shoot(sphere, None, zero, [np.pi / 2, 0.0], [0.0, 1.0], T)
    Z = ProfileField(2, 1).add(SineProfile(1, 0.0, T), [[1.0, 0.0]])
    assert second_variation(path, Z, Z) == pytest.approx((np.pi ** 2 / T ** 2 - 1) * T / 2, rel=1e-10)


def test_forms_agree_and_are_symmetric(disk_path, rng):
    W = random_admissible_field(disk_path, rng, 4)
    Z = random_admissible_field(disk_path, rng, 4)
    A = second_variation_matrix(disk_path, W, Z)
    scale = np.max(np.abs(A))
    assert np.max(np.abs(A - second_variation_matrix(disk_path, Z, W).T)) < 1e-10 * scale
    assert np.max(np.abs(A - second_variation_matrix(disk_path, W, Z, form="energy"))) < 1e-10 * scale


def test_bilinearity(disk_path, rng):
    W1 = random_admissible_field(disk_path, rng, 1)
    W2 = random_admissible_field(disk_path, rng, 1)
    Z = random_admissible_field(disk_path, rng, 1)
    a, b = 0.7, -1.3
    lhs = second_variation(disk_path, W1.scaled(a) + W2.scaled(b), Z)
    rhs = a * second_variation(disk_path, W1, Z) + b * second_variation(disk_path, W2, Z)
    assert lhs == pytest.approx(rhs, abs=1e-12 * max(1.0, abs(lhs)))


def test_jacobi_field_is_in_the_null_space(sphere, zero, rng):
    path = shoot(sphere, None, zero, [np.pi / 2, 0.0], [0.0, 1.0], np.pi)
    W = propagate_jacobi(path, [0.0, 0.0], [1.0, 0.0])
    Z = random_admissible_field(path, rng, 10)
    assert np.max(np.abs(second_variation_matrix(path, W, Z, check=False))) < 1e-8


def test_nodes_avoid_events(disk_path):
    nodes = _nudged_nodes(disk_path, 16)
    h = disk_path.total_time / 16
    assert np.min(np.abs(nodes[:, None] - disk_path.event_times[None, :])) >= 0.2 * h - 1e-15


def test_broken_space_matches_node_reduction(disk_path):
    space = BrokenJacobiSpace(disk_path, 12)
    M = second_variation_matrix(disk_path, space, space, check=False)
    R = space.node_matrix()
    assert np.max(np.abs(M - R)) < 1e-8 * np.max(np.abs(M))


def test_harmonic_index(euclid):
    path = shoot(euclid, None, make_potential("harmonic", 2), [1.0, 0.0], [0.0, 1.0], 2.5 * np.pi)
    rep = assemble_index_form(path, 8)
    assert (rep.index, rep.nullity) == (4, 0)
    assert rep.asymmetry < 1e-8


def test_sphere_conjugate_endpoint_nullity(sphere, zero):
    path = shoot(sphere, None, zero, [np.pi / 2, 0.0], [0.0, 1.0], np.pi)
    table = index_stability_scan(path, (8, 16))
    assert [(r["index"], r["nullity"]) for r in table] == [(0, 1), (0, 1)]


def test_too_few_nodes_is_reported(sphere, zero):
    path = shoot(sphere, None, zero, [np.pi / 2, 0.0], [0.0, 1.0], 1.5 * np.pi)
    with pytest.raises(RefineNodesError):
        assemble_index_form(path, 1)


def test_periodic_space_dimension(disk_path):
    assert BrokenJacobiSpace(disk_path, 8, BC.PERIODIC).count == 16
    assert BrokenJacobiSpace(disk_path, 8, BC.FIXED).count == 14
