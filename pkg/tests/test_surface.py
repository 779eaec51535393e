import numpy as np
import pytest

from geolab.surface import (
    SurfaceSpec,
    certify_strict_convexity,
    ellipsoid,
    evaluate_geometry,
    project_to_surface,
    shape_and_curvature,
    sphere,
    tangent_basis,
    torus,
)
from geolab.errors import (
    NotTangent,
    OffSurface,
    ProjectionDiverged,
    SingularGradient,
)


def test_sphere_geometry_identity_hessian(sphere_spec):
    g = evaluate_geometry(sphere_spec, np.array([1.0, 0.0, 0.0]))
    assert np.allclose(g.normal, [-1.0, 0.0, 0.0], atol=1e-12)
    assert np.allclose(g.C, np.eye(3), atol=1e-12)


def test_ellipsoid_geometry_hand_evaluated(ellipsoid_spec):
    # Q = (x^2/4 + y^2/2 + z^2 - 1)/2: grad at (2,0,0) is (1/2,0,0)
    g = evaluate_geometry(ellipsoid_spec, np.array([2.0, 0.0, 0.0]))
    assert g.grad_norm == pytest.approx(0.5, abs=1e-14)
    assert np.allclose(g.normal, [-1.0, 0.0, 0.0], atol=1e-14)
    assert np.allclose(g.C, np.diag([0.5, 1.0, 2.0]), atol=1e-13)


def test_off_surface_raises(sphere_spec):
    with pytest.raises(OffSurface):
        evaluate_geometry(sphere_spec, np.array([2.0, 0.0, 0.0]))


def test_singular_gradient_raises(sphere_spec):
    with pytest.raises(SingularGradient):
        evaluate_geometry(sphere_spec, np.array([0.0, 0.0, 0.0]))


def test_shape_and_curvature_examples(sphere_spec, ellipsoid_spec):
    g = evaluate_geometry(sphere_spec, np.array([1.0, 0.0, 0.0]))
    Su, k = shape_and_curvature(g, np.array([0.0, 1.0, 0.0]))
    assert k == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(Su, [0.0, 1.0, 0.0], atol=1e-12)
    ge = evaluate_geometry(ellipsoid_spec, np.array([2.0, 0.0, 0.0]))
    _, k1 = shape_and_curvature(ge, np.array([0.0, 1.0, 0.0]))
    _, k2 = shape_and_curvature(ge, np.array([0.0, 0.0, 1.0]))
    assert k1 == pytest.approx(1.0, abs=1e-12)
    assert k2 == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(NotTangent):
        shape_and_curvature(ge, np.array([1.0, 0.0, 0.0]))


def test_shape_operator_tangency_property(ellipsoid_spec):
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = project_to_surface(ellipsoid_spec, rng.standard_normal(3) * 1.5)
        g = evaluate_geometry(ellipsoid_spec, x)
        T = tangent_basis(g.normal)
        u = rng.standard_normal(2) @ T
        Su, _ = shape_and_curvature(g, u)
        assert abs(Su @ g.normal) < 1e-10


def test_curvature_matrix_symmetry(ellipsoid_spec):
    rng = np.random.default_rng(4)
    for _ in range(10):
        x = project_to_surface(ellipsoid_spec, rng.standard_normal(3) * 1.5)
        g = evaluate_geometry(ellipsoid_spec, x)
        assert np.allclose(g.C, g.C.T, rtol=1e-12, atol=1e-14)


def test_scaling_covariance(ellipsoid_spec):
    scaled = ellipsoid_spec.rescale(3.7)
    rng = np.random.default_rng(5)
    for _ in range(5):
        x = project_to_surface(ellipsoid_spec, rng.standard_normal(3) * 1.5)
        g1 = evaluate_geometry(ellipsoid_spec, x)
        g2 = evaluate_geometry(scaled, x)
        assert np.allclose(g1.normal, g2.normal, atol=1e-10)
        assert np.allclose(g1.C, g2.C, atol=1e-10)


def test_normalization_idempotence(ellipsoid_spec):
    rng = np.random.default_rng(6)
    for _ in range(10):
        x = project_to_surface(ellipsoid_spec, rng.standard_normal(3) * 1.5)
        grad_t, _ = ellipsoid_spec.normalized_gradient_hessian(x)
        assert abs(np.linalg.norm(grad_t) - 1.0) < 1e-8


def test_projection_examples(sphere_spec, ellipsoid_spec):
    x = project_to_surface(sphere_spec, np.array([2.0, 0.0, 0.0]))
    assert np.allclose(x, [1.0, 0.0, 0.0], atol=1e-9)
    with pytest.raises((ProjectionDiverged, SingularGradient)):
        project_to_surface(sphere_spec, np.array([0.0, 0.0, 0.0]))
    x = project_to_surface(ellipsoid_spec, np.array([2.1, 0.0, 0.0]))
    assert np.allclose(x, [2.0, 0.0, 0.0], atol=1e-9)


def test_convexity_certificates(sphere_spec, ellipsoid_spec):
    rep = certify_strict_convexity(sphere_spec, sample_budget=800, seed=0)
    assert rep.convex
    assert rep.min_kappa == pytest.approx(1.0, abs=1e-9)
    rep2 = certify_strict_convexity(ellipsoid_spec, sample_budget=800, seed=0)
    assert rep2.convex
    assert rep2.min_kappa > 0


def test_torus_is_not_convex():
    tor = torus(1.0, 0.4)
    # inner-equator point: normal curvature along the ring direction is
    # negative (saddle region), which sampling must discover
    rep = certify_strict_convexity(tor, sample_budget=400, seed=1)
    assert not rep.convex
    assert rep.min_kappa < 0
    g = evaluate_geometry(tor, np.array([0.6, 0.0, 0.0]))
    _, k = shape_and_curvature(g, np.array([0.0, 1.0, 0.0]))
    assert k < 0
