import numpy as np
import pytest

from geolab.flow import (
    PhaseState,
    check_energy_homogeneity,
    flow_to_time,
    hamiltonian,
    integrate,
    joachimsthal,
    joachimsthal_drift,
    symplectic_gradient_defect,
    time_reversibility_defect,
    vector_field,
)


def test_vector_field_examples(sphere_spec, ellipsoid_spec):
    xdot, udot = vector_field(sphere_spec, PhaseState([1, 0, 0], [0, 1.0, 0]))
    assert np.allclose(xdot, [0, 1, 0])
    assert np.allclose(udot, [-1, 0, 0], atol=1e-12)
    _, udot2 = vector_field(sphere_spec, PhaseState([1, 0, 0], [0, 2.0, 0]))
    assert np.allclose(udot2, [-4, 0, 0], atol=1e-12)
    _, udot3 = vector_field(ellipsoid_spec, PhaseState([2, 0, 0], [0, 1.0, 0]))
    assert np.allclose(udot3, [-1, 0, 0], atol=1e-12)


def test_hamiltonian_examples(sphere_spec):
    s = PhaseState([1, 0, 0], [0, 1.0, 0])
    assert hamiltonian(sphere_spec, s) == pytest.approx(0.5, abs=1e-12)
    s2 = PhaseState([1, 0, 0], [0, 2.0, 0])
    assert hamiltonian(sphere_spec, s2) == pytest.approx(2.0, abs=1e-12)
    # off-surface: H = 1/2 + kappa Q / |grad Q| with Q = 0.105, |grad| = 1.1
    off = PhaseState([1.1, 0, 0], [0, 1.0, 0])
    expected = 0.5 + (1 / 1.1) * (0.105 / 1.1)
    assert hamiltonian(sphere_spec, off) == pytest.approx(expected, rel=1e-14)


def test_symplectic_gradient_identity_on_surface(sphere_spec, ellipsoid_spec):
    states = [
        (sphere_spec, PhaseState([1, 0, 0], [0, 1.0, 0])),
        (sphere_spec, PhaseState([0, 0, 1.0], [0.6, 0.8, 0])),
        (ellipsoid_spec, PhaseState([2, 0, 0], [0, 0.6, 0.8])),
    ]
    for spec, s in states:
        s.u /= np.linalg.norm(s.u)
        assert symplectic_gradient_defect(spec, s) < 1e-8


def test_great_circle_period(sphere_spec):
    s0 = PhaseState([1, 0, 0], [0, 1.0, 0])
    traj = integrate(sphere_spec, s0, 2 * np.pi)
    assert np.linalg.norm(traj.final.x - s0.x) < 1e-7
    assert np.linalg.norm(traj.final.u - s0.u) < 1e-7


def test_zero_time_single_state(sphere_spec):
    s0 = PhaseState([1, 0, 0], [0, 1.0, 0])
    traj = integrate(sphere_spec, s0, 0.0)
    assert len(traj.ts) == 1
    assert np.allclose(traj.ys[0][:3], s0.x)


def test_energy_conservation_budget(ellipsoid_spec):
    u0 = np.array([0.0, 0.6, 0.8]); u0 /= np.linalg.norm(u0)
    traj = integrate(ellipsoid_spec, PhaseState([2.0, 0, 0], u0), 100.0)
    assert traj.max_speed_drift() <= 1e-8


def test_energy_homogeneity(sphere_spec, ellipsoid_spec):
    s0 = PhaseState([1, 0, 0], [0, 1.0, 0])
    rep = check_energy_homogeneity(sphere_spec, s0, 2.0, np.pi)
    assert rep["max_position_deviation"] <= 1e-8
    rep_same = check_energy_homogeneity(sphere_spec, s0, 1.0, 1.0, n_probes=3)
    assert rep_same["max_position_deviation"] == 0.0
    u0 = np.array([0.0, 0.6, 0.8]); u0 /= np.linalg.norm(u0)
    rep_el = check_energy_homogeneity(
        ellipsoid_spec, PhaseState([2.0, 0, 0], u0), 3.0, 10.0, n_probes=4
    )
    assert rep_el["max_position_deviation"] <= 1e-6


def test_time_reversibility(ellipsoid_spec):
    u0 = np.array([0.0, 0.6, 0.8]); u0 /= np.linalg.norm(u0)
    assert time_reversibility_defect(ellipsoid_spec, PhaseState([2, 0, 0], u0), 10.0) <= 1e-6


def test_joachimsthal_first_integral(ellipsoid_spec):
    D = np.diag([0.25, 0.5, 1.0])
    u0 = np.array([0.0, 0.6, 0.8]); u0 /= np.linalg.norm(u0)
    drift, traj = joachimsthal_drift(ellipsoid_spec, D, PhaseState([2, 0, 0], u0), 100.0)
    assert drift <= 1e-6
    # independent oracle: dI/dt vanishes numerically along the flow
    s = traj.state(len(traj.ts) // 2)
    h = 1e-6
    a = joachimsthal(D, flow_to_time(ellipsoid_spec, s, h))
    b = joachimsthal(D, flow_to_time(ellipsoid_spec, s, -h))
    assert abs(a - b) / (2 * h) < 1e-5


def test_trajectory_csv(tmp_path, sphere_spec):
    s0 = PhaseState([1, 0, 0], [0, 1.0, 0])
    traj = integrate(sphere_spec, s0, 1.0)
    path = tmp_path / "traj.csv"
    traj.to_csv(path, sphere_spec)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t,x1,x2,x3,u1,u2,u3,H"
    assert len(lines) == len(traj.ts) + 1
    first = lines[1].split(",")
    assert float(first[0]) == 0.0
    assert float(first[-1]) == pytest.approx(0.5, abs=1e-12)
