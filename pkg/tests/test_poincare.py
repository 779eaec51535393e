import numpy as np
import pytest

from geolab.errors import CollapseToPoint, NewtonDiverged, NotSymplectic
from geolab.flow import PhaseState, flow_to_time
from geolab.poincare import (
    SectionSpec,
    birkhoff_shorten,
    classify,
    find_closed_geodesic,
    return_map,
    return_map_jacobian,
    return_map_jacobian_fd,
    save_registry,
)


def test_sphere_return_map_identity(sphere_spec):
    s0 = PhaseState([1, 0, 0], [0, 1.0, 0])
    section = SectionSpec.at(sphere_spec, s0)
    z = np.array([0.03, 0.01])
    z1, T = return_map(sphere_spec, section, z)
    assert T == pytest.approx(2 * np.pi, abs=1e-6)
    assert np.linalg.norm(z1 - z) <= 1e-6


def test_section_radius_precondition(sphere_spec):
    s0 = PhaseState([1, 0, 0], [0, 1.0, 0])
    section = SectionSpec.at(sphere_spec, s0, radius=0.1)
    with pytest.raises(ValueError):
        section.lift(np.array([5.0, 0.0]))


def test_principal_orbit_returns(ellipsoid_spec):
    s0 = PhaseState([2.0, 0, 0], [0, 1.0, 0])
    section = SectionSpec.at(ellipsoid_spec, s0)
    z1, T = return_map(ellipsoid_spec, section, np.zeros(2))
    assert np.linalg.norm(z1) <= 1e-6


def test_find_closed_geodesic_sphere_totally_degenerate(sphere_spec):
    u = np.array([0.0, 0.8, 0.6])
    res = find_closed_geodesic(sphere_spec, PhaseState([1.0, 0, 0], u))
    assert res.period == pytest.approx(2 * np.pi, abs=1e-6)
    assert np.max(np.abs(res.eigenvalues - 1.0)) <= 1e-4
    assert res.classification.parabolic and res.classification.degenerate


def test_ellipsoid_classification(ellipsoid_spec):
    labels = {}
    for name, s in {
        "xy": PhaseState([2.0, 0, 0], [0, 1.0, 0]),
        "xz": PhaseState([2.0, 0, 0], [0, 0, 1.0]),
        "yz": PhaseState([0.0, np.sqrt(2.0), 0], [0, 0, 1.0]),
    }.items():
        res = find_closed_geodesic(ellipsoid_spec, s)
        labels[name] = res.classification.label
        assert res.residual <= 1e-9
        assert res.classification.symplectic_defect <= 1e-5
        assert res.classification.pairing_defect <= 1e-5
    assert labels == {"xy": "elliptic", "xz": "hyperbolic", "yz": "elliptic"}


def test_capture_radius_precondition(ellipsoid_spec):
    # a generic seed is not nearly periodic
    u = np.array([0.0, 0.6, 0.8]); u /= np.linalg.norm(u)
    with pytest.raises(NewtonDiverged):
        find_closed_geodesic(ellipsoid_spec, PhaseState([2.0, 0, 0], u))


def test_monodromy_fd_oracle(ellipsoid_spec):
    res = find_closed_geodesic(
        ellipsoid_spec, PhaseState([2.0, 0, 0], [0, 0, 1.0])
    )
    section = SectionSpec.at(ellipsoid_spec, res.state)
    M, _, _ = return_map_jacobian(ellipsoid_spec, section, np.zeros(2))
    Mfd = return_map_jacobian_fd(ellipsoid_spec, section, np.zeros(2))
    assert np.max(np.abs(M - Mfd)) <= 1e-4


def test_classification_invariance_under_section_change(ellipsoid_spec):
    res = find_closed_geodesic(
        ellipsoid_spec, PhaseState([2.0, 0, 0], [0, 0, 1.0])
    )
    s2 = flow_to_time(ellipsoid_spec, res.state, 1.234)
    res2 = find_closed_geodesic(ellipsoid_spec, s2)
    e1 = np.sort_complex(res.eigenvalues)
    e2 = np.sort_complex(res2.eigenvalues)
    assert np.max(np.abs(e1 - e2)) <= 1e-5
    assert res2.classification.label == res.classification.label


def test_classification_invariance_under_energy_rescaling(ellipsoid_spec):
    res = find_closed_geodesic(
        ellipsoid_spec, PhaseState([2.0, 0, 0], [0, 0, 1.0])
    )
    res2 = find_closed_geodesic(
        ellipsoid_spec, PhaseState(res.state.x, 2.5 * res.state.u)
    )
    assert res2.classification.label == res.classification.label
    assert np.max(np.abs(np.sort_complex(res2.eigenvalues)
                         - np.sort_complex(res.eigenvalues))) <= 1e-5


def test_classify_examples():
    r = classify(np.eye(2))
    assert r.parabolic and r.degenerate and r.label == "parabolic"
    r2 = classify(np.diag([2.0, 0.5]))
    assert r2.label == "hyperbolic"
    th = 1.0
    rot = np.array([[np.cos(th), np.sin(th)], [-np.sin(th), np.cos(th)]])
    r3 = classify(rot)
    assert r3.label == "elliptic" and r3.q == 1 and not r3.degenerate
    # brute-force oracle: 1.0 rad is no root of unity of order <= 20
    assert all(abs(np.exp(1j * th) ** q - 1) > 1e-6 * q for q in range(1, 21))
    with pytest.raises(NotSymplectic):
        classify(np.diag([2.0, 2.0]))


def test_registry_roundtrip(tmp_path, ellipsoid_spec):
    res = find_closed_geodesic(
        ellipsoid_spec, PhaseState([2.0, 0, 0], [0, 0, 1.0])
    )
    path = tmp_path / "registry.json"
    payload = save_registry(path, ellipsoid_spec, [res])
    import json

    loaded = json.loads(path.read_text())
    assert loaded == payload
    assert loaded["orbits"][0]["label"] == "hyperbolic"


def test_birkhoff_shorten_sphere(sphere_spec):
    m = 512
    th = np.linspace(0, 2 * np.pi, m, endpoint=False)
    wob = np.stack([np.cos(th), np.sin(th), 0.25 * np.sin(3 * th)], axis=1)
    res = birkhoff_shorten(sphere_spec, wob)
    assert abs(res.length - 2 * np.pi) <= 1e-4
    closed = find_closed_geodesic(sphere_spec, res.seed)
    assert closed.period == pytest.approx(2 * np.pi, abs=1e-6)


def test_birkhoff_shorten_ellipsoid_latitude(ellipsoid_spec):
    m = 512
    th = np.linspace(0, 2 * np.pi, m, endpoint=False)
    lat = np.stack(
        [2 * np.cos(th), np.sqrt(2.0) * np.sin(th), 0.2 * np.sin(2 * th)], axis=1
    )
    res = birkhoff_shorten(ellipsoid_spec, lat)
    # converges onto the planar x-y principal ellipse
    assert np.max(np.abs(res.polyline[:, 2])) <= 1e-3
    closed = find_closed_geodesic(ellipsoid_spec, res.seed)
    assert closed.classification.label == "elliptic"


def test_birkhoff_shorten_collapse(sphere_spec):
    m = 48
    th = np.linspace(0, 2 * np.pi, m, endpoint=False)
    tiny = np.stack(
        [np.full(m, 0.9), 0.05 * np.cos(th), 0.05 * np.sin(th)], axis=1
    )
    with pytest.raises(CollapseToPoint):
        birkhoff_shorten(sphere_spec, tiny)
