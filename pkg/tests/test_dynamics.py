import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reflected_morse.dynamics import (Decision, EventKind, EventPolicy, IntegratorOptions, action,
                                      criticality_residual, equation_residual, first_variation, reflect_velocity,
                                      reversed_path, shoot, two_point_solve)
from reflected_morse.errors import (ConjugateEndpointError, MaxEventsExceeded, PolicyError, PreconditionError,
                                    TangencyError)
from reflected_morse.fields import ProfileField, SineProfile, random_admissible_field
from reflected_morse.geometry import make_chart, make_hypersurface, make_potential


@given(st.floats(0, 2 * np.pi), st.floats(0.05, 1.5), st.floats(-1.0, 1.0))
def test_reflection_law(a, speed, tangential):
    geom = make_chart("euclidean")
    disk = make_hypersurface("circle", 2, boundary=True)
    y = np.array([np.cos(a), np.sin(a)])
    n = -y
    t = np.array([-np.sin(a), np.cos(a)])
    v_in = -speed * n + tangential * t
    v_out = reflect_velocity(geom, disk, y, v_in)
    assert v_out @ t == pytest.approx(tangential, abs=1e-12)
    assert v_out @ n == pytest.approx(speed, abs=1e-12)
    assert np.linalg.norm(v_out) == pytest.approx(np.linalg.norm(v_in), rel=1e-12)


def test_reflection_law_in_curved_metric():
    geom = make_chart("sphere-polar")
    lat = make_hypersurface("hyperplane", 2, axis=0, offset=1.0)
    y = np.array([1.0, 0.3])
    v_in = np.array([0.4, 0.7])
    v_out = reflect_velocity(geom, lat, y, v_in)
    assert np.allclose(v_out, [-0.4, 0.7])
    assert geom.norm(y, v_out) == pytest.approx(geom.norm(y, v_in))


def test_grazing_incidence_raises():
    geom = make_chart("euclidean")
    wall = make_hypersurface("hyperplane", 2, axis=0)
    with pytest.raises(TangencyError):
        reflect_velocity(geom, wall, [0.0, 0.0], [1e-8, 1.0])


def test_strip_billiard_events_and_action(euclid, strip, zero):
    path = shoot(euclid, strip, zero, [0.5, 0.0], [1.0, 0.0], 2.0)
    assert np.allclose(path.event_times, [0.5, 1.5], atol=1e-12)
    assert all(e.kind is EventKind.REFLECTION for e in path.events)
    x, v = path.final_state
    assert np.allclose(x, [0.5, 0.0], atol=1e-10)
    assert np.allclose(v, [1.0, 0.0], atol=1e-10)
    assert action(path) == pytest.approx(1.0, abs=1e-12)
    assert path.continuity_gap() < 1e-12


def test_one_sided_states_at_event(euclid, strip, zero):
    path = shoot(euclid, strip, zero, [0.5, 0.0], [1.0, 0.5], 1.0)
    t = path.event_times[0]
    _, v_left = path.state(t, -1)
    _, v_right = path.state(t, 1)
    assert np.allclose(v_left, [1.0, 0.5]) and np.allclose(v_right, [-1.0, 0.5])
    assert path.side_at(t, -1) == 1 and path.side_at(t, 1) == 1


def test_harmonic_oscillator_closed_form(euclid):
    pot = make_potential("harmonic", 2)
    path = shoot(euclid, None, pot, [1.0, 0.0], [0.0, 1.0], 5.0)
    for t in (0.7, 2.2, 5.0):
        x, v = path.state(t, -1 if t == 5.0 else 1)
        assert np.allclose(x, [np.cos(t), np.sin(t)], atol=1e-9)
        assert np.allclose(v, [-np.sin(t), np.cos(t)], atol=1e-9)
    assert path.energy_drift() < 1e-9


def test_sphere_equator_is_a_geodesic(sphere, zero):
    path = shoot(sphere, None, zero, [np.pi / 2, 0.0], [0.0, 1.0], 3.0)
    x, v = path.final_state
    assert np.allclose(x, [np.pi / 2, 3.0], atol=1e-10)
    assert path.energy_drift() < 1e-10


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 1.4), st.floats(-0.8, 0.8))
def test_disk_billiard_conserves_energy(angle, y0):
    geom = make_chart("euclidean")
    disk = make_hypersurface("circle", 2, boundary=True)
    path = shoot(geom, disk, make_potential("zero", 2), [0.0, 0.5 * y0], [np.cos(angle), np.sin(angle)], 6.0)
    assert len(path.events) >= 2
    assert path.energy_drift() < 1e-9
    assert max(abs(disk.rho(e.point)) for e in path.events) < 1e-9


def test_transmission_creates_kinks_with_continuous_velocity(euclid):
    wall = make_hypersurface("hyperplane", 2, axis=0, offset=0.0)
    pot = make_potential("harmonic", 2)
    path = shoot(euclid, wall, pot, [0.6, 0.1], [-1.0, 0.4], 6.0, EventPolicy.transmit_all())
    assert [e.kind for e in path.events] == [EventKind.KINK, EventKind.KINK]
    for e in path.events:
        assert np.allclose(e.v_in, e.v_out)
    assert path.side_at(path.event_times[0], 1) == -1


def test_policy_rules(euclid, strip, zero):
    with pytest.raises(PolicyError):
        shoot(euclid, strip, zero, [0.5, 0.0], [1.0, 0.0], 2.0, EventPolicy.exact(["reflect"]))
    with pytest.raises(PolicyError):
        shoot(euclid, strip, zero, [0.5, 0.0], [1.0, 0.0], 2.0, EventPolicy(["transmit"]))
    pol = EventPolicy(["reflect"], "transmit")
    assert pol.decision(0) is Decision.REFLECT and pol.decision(3) is Decision.TRANSMIT


def test_start_on_hypersurface_is_rejected(euclid, strip, zero):
    with pytest.raises(PreconditionError):
        shoot(euclid, strip, zero, [0.0, 0.3], [1.0, 0.0], 1.0)


def test_event_budget(euclid, strip, zero):
    opts = IntegratorOptions(max_events=3)
    with pytest.raises(MaxEventsExceeded):
        shoot(euclid, strip, zero, [0.5, 0.0], [1.0, 0.0], 10.0, options=opts)


def test_grazing_path_raises(euclid, zero):
    # the harmonic orbit x = sin t crosses x = 1 - 1e-7 with normal speed about 4.5e-4
    wall = make_hypersurface("hyperplane", 2, axis=0, offset=1.0 - 1e-7, boundary=True)
    with pytest.raises(TangencyError):
        shoot(euclid, wall, make_potential("harmonic", 2), [0.0, 0.0], [1.0, 0.0], 3.0,
              options=IntegratorOptions(v_min=1e-3))


def test_reversed_path_retraces(euclid, disk, zero):
    path = shoot(euclid, disk, zero, [0.1, 0.2], [0.6, 0.8], 3.0)
    back = reversed_path(path)
    x, v = back.final_state
    assert np.allclose(x, path.x0, atol=1e-8)
    assert np.allclose(v, -path.v0, atol=1e-8)
    assert np.allclose(np.sort(path.total_time - back.event_times), path.event_times, atol=1e-8)


def test_equation_residual_vanishes_on_physical_path(sphere, zero):
    path = shoot(sphere, None, zero, [1.0, 0.0], [0.3, 1.0], 2.0)
    assert np.max(np.abs(equation_residual(path, 1.1))) < 1e-6


def test_first_variation_vanishes_for_admissible_probes(euclid, disk, zero, rng):
    path = shoot(euclid, disk, zero, [0.2, 0.1], [0.8, 0.6], 3.0)
    probes = random_admissible_field(path, rng, count=5)
    assert criticality_residual(path, probes) < 1e-6


def test_first_variation_detects_unphysical_reflection(euclid, zero):
    # force a transmission through a wall but feed the probe a jump consistent with reflection:
    # the event term picks up the velocity jump of a reflected path only
    wall = make_hypersurface("hyperplane", 2, axis=0, offset=0.5)
    path = shoot(euclid, wall, zero, [0.0, 0.0], [1.0, 0.0], 1.0, EventPolicy.transmit_all())
    probe = ProfileField(2, 1).add(SineProfile(1, 0.0, 1.0), [[0.0, 1.0]])
    assert abs(first_variation(path, probe)[0]) < 1e-10
    refl = shoot(euclid, wall, zero, [0.0, 0.0], [1.0, 0.0], 1.0, EventPolicy.reflect_all())
    normal_probe = ProfileField(2, 1).add(SineProfile(1, 0.0, 1.0), [[1.0, 0.0]])
    # a probe whose normal part does not flip is inadmissible and sees the reflection impulse
    assert abs(first_variation(refl, normal_probe)[0]) == pytest.approx(2.0, rel=1e-6)


def test_two_point_solve_with_reflection(euclid, strip, zero):
    path = two_point_solve(euclid, strip, zero, [0.5, 0.2], [0.5, 0.7], [0.8, 0.2], 1.0,
                           EventPolicy.exact(["reflect"]))
    assert np.allclose(path.final_state[0], [0.5, 0.7], atol=1e-10)
    # unfold the wall at x = 1: straight line from (0.5, 0.2) to (1.5, 0.7)
    assert np.allclose(path.v0, [1.0, 0.5], atol=1e-9)


def test_two_point_solve_on_sphere(sphere, zero):
    y = [np.pi / 2 + 0.3, 1.2]
    path = two_point_solve(sphere, None, zero, [np.pi / 2, 0.0], y, [0.2, 1.0], 1.3)
    assert np.allclose(path.final_state[0], y, atol=1e-10)


def test_two_point_solve_conjugate_endpoints(sphere, zero):
    with pytest.raises(ConjugateEndpointError):
        two_point_solve(sphere, None, zero, [np.pi / 2, 0.0], [np.pi / 2, np.pi], [0.1, 1.0], np.pi)


def test_two_point_solve_isotropic_focus(euclid):
    # every path of x'' = -x from x returns to x at time 2 pi, so no other end point is reachable
    with pytest.raises(ConjugateEndpointError):
        two_point_solve(euclid, None, make_potential("harmonic", 2), [0.3, 0.0], [0.5, 0.0], [0.1, 1.0],
                        2 * np.pi)
