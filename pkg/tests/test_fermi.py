import numpy as np
import pytest

from geolab.errors import SelfIntersectingTube
from geolab.fermi import build_chart, hv_split
from geolab.flow import PhaseState, vector_field


def test_equator_frame_is_constant_z(equator_chart):
    # the equator's parallel frame is +-zhat by symmetry
    assert np.allclose(np.abs(equator_chart.frames[:, 0, 2]), 1.0, atol=1e-10)
    assert np.allclose(equator_chart.frames[:, 0, :2], 0.0, atol=1e-10)


def test_frame_orthonormality_and_parallelism(ellipsoid_xy_chart):
    res = ellipsoid_xy_chart.frame_residuals()
    assert res["orthonormality"] <= 1e-8
    assert res["parallel_residual"] <= 1e-7


def test_base_geodesic_reads_t_zero(equator_chart, ellipsoid_xy_chart):
    for ch in (equator_chart, ellipsoid_xy_chart):
        res = ch.geodesic_residuals()
        assert res["point_residual"] <= 1e-9
        assert res["inverse_residual"] <= 1e-8


def test_metric_identity_and_derivative(equator_chart):
    g = equator_chart.metric(1.0, [0.0])
    assert np.max(np.abs(g - np.eye(2))) <= 1e-6
    assert np.max(equator_chart.metric_y_derivative_norms(1.0)) <= 1e-4


def test_metric_off_axis_positive_definite_and_fd_oracle(equator_chart):
    g = equator_chart.metric(1.0, [0.05])
    w = np.linalg.eigvalsh(g)
    assert w[0] > 0
    assert np.allclose(g, g.T, atol=1e-12)
    # closed form on the unit sphere: g00 = cos^2 y
    assert g[0, 0] == pytest.approx(np.cos(0.05) ** 2, abs=1e-9)
    gfd = equator_chart.metric(1.0, [0.05], route="fd")
    assert np.max(np.abs(g - gfd)) <= 1e-8


def test_roundtrip_through_exact_inverse(ellipsoid_xy_chart):
    ch = ellipsoid_xy_chart
    for (t, y) in ((1.0, 0.02), (2.3, -0.03)):
        x = ch.point(t, [y])
        t2, y2 = ch.invert(x)
        assert abs(t2 - t) <= 1e-7
        assert abs(y2[0] - y) <= 1e-7


def test_zero_fiber_maps_to_base(ellipsoid_xy_chart):
    for t in (0.5, 1.7, 3.1):
        x = ellipsoid_xy_chart.point(t, [0.0])
        assert np.linalg.norm(x - ellipsoid_xy_chart.state(t).x) <= 1e-9


def test_ctilde_identity(ellipsoid_xy_chart):
    for t in (0.4, 1.9, 3.3):
        Ct = ellipsoid_xy_chart.ctilde(t, [0.0])
        assert abs(Ct[0, 0] - ellipsoid_xy_chart.kappa(t)) <= 1e-6


def test_hv_split_examples(sphere_spec, equator_chart):
    t = 0.7
    st = equator_chart.state(t)
    # vertical variation
    h, v = hv_split(sphere_spec, st, np.zeros(3), np.array([0.0, 0.0, 0.3]))
    assert np.allclose(h, 0.0)
    assert np.allclose(v, [0, 0, 0.3], atol=1e-12)
    # variation along the flow: (gamma', kappa n) projects to (gamma', 0)
    xdot, udot = vector_field(sphere_spec, st)
    h2, v2 = hv_split(sphere_spec, st, xdot, udot)
    assert np.allclose(h2, st.u, atol=1e-12)
    assert np.linalg.norm(v2) <= 1e-10
    # rotation-generated family about the x-axis: J = sin(t) e1, J' = cos(t) e1
    xhat = np.array([1.0, 0, 0])
    h3, v3 = hv_split(sphere_spec, st, np.cross(xhat, st.x), np.cross(xhat, st.u))
    e1 = equator_chart.frame(t)[0]
    assert h3 @ e1 == pytest.approx(np.sin(t) * np.sign(e1[2]), abs=1e-7)
    assert v3 @ e1 == pytest.approx(np.cos(t) * np.sign(e1[2]), abs=1e-7)


def test_self_intersection_screen(sphere_spec):
    s0 = PhaseState([1.0, 0, 0], [0.0, 1.0, 0.0])
    with pytest.raises(SelfIntersectingTube):
        build_chart(sphere_spec, s0, 4.0 * np.pi, dt=0.02, delta=0.3)
    # closed=True treats time separation circularly: one full period passes
    build_chart(sphere_spec, s0, 2 * np.pi, dt=0.02, delta=0.05, closed=True)


def test_chart_json_dump(tmp_path, equator_chart):
    path = tmp_path / "chart.json"
    equator_chart.to_json(path)
    import json

    payload = json.loads(path.read_text())
    assert payload["delta"] == pytest.approx(equator_chart.delta)
    assert len(payload["ts"]) == len(equator_chart.ts)
    assert payload["chart_id"] == equator_chart.chart_id
