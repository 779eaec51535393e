import numpy as np
import pytest

from geolab.errors import KappaVanishesOnSupport
from geolab.flow import PhaseState, hamiltonian
from geolab.perturb import (
    BumpSpec,
    BumpField,
    PerturbedSurface,
    fermi_metric_perturbation,
    finite_difference_check,
    first_order_hamiltonian,
    geodesic_preservation_deviation,
    jet_effect_first_order,
    measure_jet_effect_k1,
    r_map,
    tube_lift,
    tube_read,
)
from geolab.surface import torus


def test_first_order_hamiltonian_examples(sphere_spec):
    s = PhaseState([1, 0, 0], [0, 1.0, 0])
    # on-surface: Hbar = kappa psi / |grad Q| = 1 * 1 / 1
    assert first_order_hamiltonian(sphere_spec, "x1", s) == pytest.approx(1.0, abs=1e-12)
    # psi vanishing near x
    assert first_order_hamiltonian(sphere_spec, "x2^3", s) == pytest.approx(0.0, abs=1e-12)
    # psi = Q gives 0 on the surface
    assert first_order_hamiltonian(sphere_spec, sphere_spec.expr, s) == pytest.approx(0.0, abs=1e-12)


def test_finite_difference_richardson(sphere_spec, ellipsoid_spec):
    off = PhaseState([1.1, 0, 0], [0, 1.0, 0])
    rep = finite_difference_check(sphere_spec, "x1", off, 1e-4)
    assert 1.7 <= rep["ratio"] <= 2.3
    off_el = PhaseState([2.05, 0.0, 0.02], [0.0, 1.0, 0.0])
    rep2 = finite_difference_check(ellipsoid_spec, "x1*x3 + x2^2", off_el, 1e-4)
    assert 1.7 <= rep2["ratio"] <= 2.3


def test_psi_zero_means_zero_slope(sphere_spec):
    s = PhaseState([1.1, 0, 0], [0, 1.0, 0])
    base = hamiltonian(sphere_spec, s)
    pert = PerturbedSurface(sphere_spec, ambient=[(1e-3, "0.0*x1")])
    assert hamiltonian(pert, s) == pytest.approx(base, abs=1e-15)


def test_perturbed_surface_combines_tapes(ellipsoid_spec):
    pert = PerturbedSurface(ellipsoid_spec, ambient=[(0.05, "x1^2*x3^2")])
    x = np.array([1.3, 0.4, 0.6])
    expect = ellipsoid_spec.value(x) + 0.05 * (x[0] ** 2 * x[2] ** 2)
    assert pert.value(x) == pytest.approx(expect, rel=1e-14)


def test_bump_requires_interior_support(equator_chart):
    with pytest.raises(ValueError):
        BumpSpec(chart=equator_chart, t0=0.001, eps0=0.01, wphi=[1.0])


def test_kappa_vanishes_guard():
    # a geodesic crossing the parabolic band of a torus (the top line has
    # vanishing normal curvature in the azimuthal direction)
    tor = torus(1.0, 0.4)
    from geolab.fermi import build_chart
    from geolab.flow import flow_to_time

    top = PhaseState([1.0, 0.0, 0.4], [0.0, 1.0, 0.0])
    s0 = flow_to_time(tor, top, -0.4)
    ch = build_chart(tor, PhaseState(s0.x, s0.u), 0.8, dt=0.005)
    i_min = int(np.argmin(np.abs(ch.kap)))
    assert abs(ch.kap[i_min]) < 1e-3
    t_min = float(ch.ts[i_min])
    with pytest.raises(KappaVanishesOnSupport):
        BumpSpec(chart=ch, t0=t_min, eps0=0.05, wphi=[1.0])


def test_fermi_metric_perturbation_examples(equator_chart, sphere_spec):
    # psi = 0 at the point -> gbar = 0
    g0 = fermi_metric_perturbation(equator_chart, "x3^2*0.0", 1.0, [0.0])
    assert np.allclose(g0, 0.0)
    # on gamma: gbar_00 = 2 psi kappa
    g1 = fermi_metric_perturbation(equator_chart, "x1", 1.0, [0.0])
    x = equator_chart.state(1.0).x
    assert g1[0, 0] == pytest.approx(2 * x[0] * 1.0, abs=1e-8)
    # constant psi = 1: gbar = 2 Ctilde with Ctilde ~ I on the unit sphere
    g2 = fermi_metric_perturbation(equator_chart, "1.0 + 0.0*x1", 1.0, [0.0])
    assert np.allclose(g2, 2 * np.eye(2), atol=1e-8)


def test_bump_field_matches_chart_formula(equator_chart):
    b = BumpSpec(chart=equator_chart, t0=1.2, eps0=0.05, poly=(((2,), 1.0),))
    field = BumpField(b, amp=1.0)
    from geolab.variational import mollifier_constant

    y = 0.02
    x = equator_chart.point(1.2, [y])
    c = mollifier_constant()
    expected = (c * np.exp(-1.0)) / 0.05 * y**2  # phi_{eps0}(0) * y^2, kappa = 1
    assert field.value(x) == pytest.approx(expected, rel=1e-3)


def test_tube_lift_read_roundtrip(sphere_spec, equator_chart):
    z = np.array([0.02, -0.015])
    s = tube_lift(sphere_spec, equator_chart, 0.7, z)
    assert abs(sphere_spec.value(s.x)) <= 1e-12
    t, z2 = tube_read(equator_chart, s)
    assert t == pytest.approx(0.7, abs=1e-10)
    assert np.linalg.norm(z2 - z) <= 1e-10


def test_r_map_identities(sphere_spec, equator_chart):
    z = np.array([0.02, -0.01])
    # eps = 0
    z1 = r_map(sphere_spec, equator_chart, 2.0, z)
    assert np.linalg.norm(z1 - z) <= 1e-8
    # support after the section: identity
    b_late = BumpSpec(chart=equator_chart, t0=2.6, eps0=0.05, poly=(((2,), 1.0),))
    pert = PerturbedSurface(sphere_spec, bumps=[(1e-3, b_late)])
    z2 = r_map(pert, equator_chart, 2.0, z)
    assert np.linalg.norm(z2 - z) <= 1e-7
    # orbit preserved at the origin for a P^1 bump
    b = BumpSpec(chart=equator_chart, t0=1.2, eps0=0.05, poly=(((2,), 1.0),))
    pert2 = PerturbedSurface(sphere_spec, bumps=[(1e-3, b)])
    z0 = r_map(pert2, equator_chart, 2.0, np.zeros(2))
    assert np.linalg.norm(z0) <= 1e-7


def test_perturbation_space_membership(equator_chart):
    lin = BumpSpec(chart=equator_chart, t0=1.2, eps0=0.05, wphi=[1.0])
    assert lin.in_perturbation_space(0)
    assert not lin.in_perturbation_space(1)
    quad = BumpSpec(chart=equator_chart, t0=1.2, eps0=0.05, poly=(((2,), 1.0),))
    assert quad.k == 1
    assert quad.in_perturbation_space(1)
    cubic = BumpSpec(chart=equator_chart, t0=1.2, eps0=0.05, poly=(((3,), 0.5),))
    assert cubic.k == 2 and cubic.in_perturbation_space(2)


def test_geodesic_preservation(sphere_spec, equator_chart):
    b = BumpSpec(chart=equator_chart, t0=1.2, eps0=0.05, poly=(((2,), 1.0),))
    dev = geodesic_preservation_deviation(sphere_spec, equator_chart, [(1e-3, b)])
    assert dev <= 1e-7


def test_jet_effect_zero_and_linearity(sphere_spec, equator_chart):
    b1 = BumpSpec(chart=equator_chart, t0=0.8, eps0=1e-2, poly=(((2,), 1.0),))
    b2 = BumpSpec(chart=equator_chart, t0=1.6, eps0=1e-2, poly=(((2,), 0.7),))
    zero = jet_effect_first_order(sphere_spec, equator_chart, [(0.0, b1)], 2.0)
    assert np.allclose(zero["matrix_increment"], 0.0)
    cache = {}
    p1 = jet_effect_first_order(sphere_spec, equator_chart, [(1e-4, b1)], 2.0,
                                dp_cache=cache)
    p2 = jet_effect_first_order(sphere_spec, equator_chart, [(1e-4, b2)], 2.0,
                                dp_cache=cache)
    both = jet_effect_first_order(sphere_spec, equator_chart,
                                  [(1e-4, b1), (1e-4, b2)], 2.0, dp_cache=cache)
    total = p1["matrix_increment"] + p2["matrix_increment"]
    assert np.linalg.norm(both["matrix_increment"] - total) <= 1e-6 * np.linalg.norm(total)


def test_jet_effect_matches_finite_differences(sphere_spec, equator_chart):
    eps = 1e-4
    b = BumpSpec(chart=equator_chart, t0=np.pi / 4, eps0=1e-2, poly=(((2,), 1.0),))
    pred = jet_effect_first_order(sphere_spec, equator_chart, [(eps, b)], 2.0)
    meas = measure_jet_effect_k1(sphere_spec, equator_chart, [(eps, b)], 2.0)
    A = pred["matrix_increment"]
    assert np.linalg.norm(meas - A) / np.linalg.norm(A) <= 5e-2


def test_bump_library_roundtrip(tmp_path, equator_chart):
    from geolab.perturb import load_bump_library, save_bump_library

    b1 = BumpSpec(chart=equator_chart, t0=0.9, eps0=0.04, wphi=[1.0], wdphi=[0.5])
    b2 = BumpSpec(chart=equator_chart, t0=1.7, eps0=0.03, poly=(((2,), 0.8),))
    path = tmp_path / "bumps.json"
    lib = save_bump_library(path, [(1e-3, b1), (2e-3, b2)])
    assert equator_chart.chart_id in lib
    loaded = load_bump_library(path, {equator_chart.chart_id: equator_chart})
    assert len(loaded) == 2
    amp, built = loaded[1]
    assert amp == 2e-3
    assert built.poly == b2.poly
    assert built.t0 == b2.t0
