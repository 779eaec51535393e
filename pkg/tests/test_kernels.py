"""Numba/pure-python equivalence and integrator order checks."""

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from geolab import accel
from geolab import integrate as it
from geolab.flow import PhaseState, integrate
from geolab.kernels import (
    pack_tape,
    tape_v,
    tape_vg,
    tape_vgh,
    project_point,
    tube_coords,
)
from geolab import expr as ex


def test_jitted_and_python_paths_agree(sphere_spec):
    pk = sphere_spec.pack()
    x = np.array([0.8, 0.55, 0.24])
    g1 = np.empty(3)
    H1 = np.empty((3, 3))
    v1 = tape_vgh(pk.ops, pk.a1, pk.a2, pk.cv, x, g1, H1)
    g2 = np.empty(3)
    H2 = np.empty((3, 3))
    v2 = tape_vgh.py_func(pk.ops, pk.a1, pk.a2, pk.cv, x, g2, H2)
    assert v1 == v2
    assert np.array_equal(g1, g2)
    assert np.array_equal(H1, H2)


def test_projection_kernel_paths_agree(ellipsoid_spec):
    pk = ellipsoid_spec.pack()
    x1 = np.array([2.3, 0.4, 0.5])
    x2 = x1.copy()
    s1 = project_point(pk, x1, 1e-12, 50)
    s2 = project_point.py_func(pk, x2, 1e-12, 50)
    assert s1 == s2 == 0
    assert np.allclose(x1, x2, atol=1e-13)


def test_integrator_matches_scipy_dop853(sphere_spec):
    """Cross-check the embedded stepper against scipy's DOP853 on the same
    vector field at tight tolerances."""
    s0 = PhaseState([1.0, 0, 0], [0.0, 0.8, 0.6])
    s0.u /= np.linalg.norm(s0.u)
    ours = integrate(sphere_spec, s0, 3.0, store=False)

    def rhs(t, y):
        x, u = y[:3], y[3:]
        g = x
        gn = np.linalg.norm(g)
        kap = (u @ u) / gn
        return np.concatenate([u, -kap * g / gn])

    ref = solve_ivp(rhs, (0, 3.0), np.concatenate([s0.x, s0.u]),
                    method="DOP853", rtol=1e-12, atol=1e-13)
    assert np.allclose(ours.final.x, ref.y[:3, -1], atol=1e-8)
    assert np.allclose(ours.final.u, ref.y[3:, -1], atol=1e-8)


def test_rk_single_is_high_order(sphere_spec):
    """Error of one unprojected step should scale around h^8."""
    pk = sphere_spec.pack()
    y0 = np.concatenate([[1.0, 0, 0], [0, 1.0, 0]])

    def exact(t):
        return np.concatenate(
            [[np.cos(t), np.sin(t), 0.0], [-np.sin(t), np.cos(t), 0.0]]
        )

    errs = []
    for h in (0.4, 0.2):
        y1 = np.empty(6)
        it.rk_single(pk, 0, y0, h, y1)
        errs.append(np.linalg.norm(y1 - exact(h)))
    order = np.log2(errs[0] / errs[1])
    assert order > 7.0


def test_tube_coords_identity(equator_chart):
    pk = equator_chart.tube_pack()
    x = equator_chart.point(1.0, [0.03])
    c = np.empty(3)
    status = tube_coords(pk, x, c)
    assert status == 0
    assert c[0] == pytest.approx(1.0, abs=1e-9)
    # the tube model differs from the exp chart at second order in |y|
    assert c[1] == pytest.approx(0.03, abs=1e-4)
    # points on the curve invert exactly
    xg = equator_chart.state(2.0).x
    status = tube_coords(pk, xg, c)
    assert status == 0
    assert c[0] == pytest.approx(2.0, abs=1e-10)
    assert abs(c[1]) < 1e-10


def test_far_points_are_outside(equator_chart):
    pk = equator_chart.tube_pack()
    c = np.empty(3)
    assert tube_coords(pk, np.array([0.0, 0.0, 5.0]), c) == 1


def test_accel_flag_reports():
    assert hasattr(accel, "USING_NUMBA")
    assert callable(accel.jitted)
