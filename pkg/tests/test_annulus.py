import numpy as np
import pytest

from geolab import annulus as AN
from geolab.errors import MapEvaluationFailed, NotConvex
from geolab.flow import PhaseState
from geolab.poincare import find_closed_geodesic
from geolab.surface import torus


@pytest.fixture(scope="module")
def sphere_map(sphere_spec):
    res = find_closed_geodesic(sphere_spec, PhaseState([1, 0, 0], [0, 1.0, 0]))
    return AN.build_annulus_map(sphere_spec, res, normal=[0, 0, 1.0],
                                convexity_budget=300)


@pytest.fixture(scope="module")
def ellipsoid_map(ellipsoid_spec):
    res = find_closed_geodesic(ellipsoid_spec, PhaseState([2, 0, 0], [0, 1.0, 0]))
    return AN.build_annulus_map(ellipsoid_spec, res, normal=[0, 0, 1.0],
                                convexity_budget=300)


def test_sphere_map_is_identity(sphere_map):
    for phi, y in ((0.3, 0.7), (4.0, np.pi / 2)):
        z1, tau = sphere_map.step(np.array([phi, y]))
        assert np.linalg.norm(AN._wrap_delta(z1 - [phi, y])) <= 1e-6
        assert tau == pytest.approx(2 * np.pi, abs=1e-6)


def test_boundary_points_rejected(sphere_map):
    with pytest.raises(MapEvaluationFailed):
        sphere_map.step(np.array([0.2, 0.0]))


def test_nonconvex_surface_rejected():
    # the convexity certificate runs before any geodesic work
    tor = torus()
    with pytest.raises(NotConvex):
        AN.build_annulus_map(tor, None, normal=[0, 0, 1.0],
                             convexity_budget=200, seed=2)


def test_xz_trace_is_period_two_point(ellipsoid_map):
    # the x-z ellipse crosses the section plane at two points; each is a
    # fixed point of the ascending-return map, hence fixed under P^2
    z = ellipsoid_map.read(PhaseState(np.array([2.0, 0, 0]), np.array([0, 0, 1.0])))
    assert z[1] == pytest.approx(np.pi / 2, abs=1e-9)
    z2, _ = ellipsoid_map.step(z, m=2)
    assert np.linalg.norm(AN._wrap_delta(z2 - z)) <= 1e-6


def test_fixed_point_catalog(ellipsoid_map):
    seeds = [np.array([p, np.pi / 2])
             for p in np.linspace(0.05, 2 * np.pi, 8, endpoint=False)]
    fps = AN.annulus_fixed_points(ellipsoid_map, seeds, m=1)
    labels = sorted(f.label for f in fps)
    assert labels.count("hyperbolic") == 2
    assert labels.count("elliptic") == 2
    for f in fps:
        assert f.residual <= 1e-9


def test_branch_growth_lambda_scaling(ellipsoid_map):
    seeds = [np.array([p, np.pi / 2])
             for p in np.linspace(0.05, 2 * np.pi, 8, endpoint=False)]
    fps = AN.annulus_fixed_points(ellipsoid_map, seeds, m=1)
    hyp = [f for f in fps if f.label == "hyperbolic"][0]
    bu = AN.grow_branches(ellipsoid_map, hyp, "unstable", max_arclength=0.5)
    lam = abs(hyp.unstable_eigenvalue)
    assert bu.growth_ratios
    assert bu.growth_ratios[0] == pytest.approx(lam, rel=5e-2)
    # zero budget: seed only
    b0 = AN.grow_branches(ellipsoid_map, hyp, "unstable", max_arclength=0.0)
    assert len(b0.points) == 1


def test_detect_crossing_pure_geometry():
    mk = lambda pts: AN.BranchCurve(
        points=np.array(pts, float),
        arclengths=np.zeros(len(pts)),
        side="unstable",
        origin=np.array([-10.0, -10.0]),
        eigenvalue=2.0,
    )
    # parallel, non-intersecting
    a = mk([[0.0, 0.4], [1.0, 0.4], [2.0, 0.4]])
    b = mk([[0.0, 0.6], [1.0, 0.6], [2.0, 0.6]])
    assert AN.detect_crossing(a, b) == []
    # right-angle crossing
    c = mk([[1.0, 0.0], [1.0, 1.0]])
    d = mk([[0.5, 0.5], [1.5, 0.5]])
    hits = AN.detect_crossing(c, d)
    assert len(hits) == 1
    assert hits[0]["angle"] == pytest.approx(np.pi / 2, abs=1e-12)
    assert hits[0]["transverse"]
    # wrap in phi: segments touching across the 2 pi seam
    e = mk([[6.2, 0.0], [6.2, 1.0]])
    f = mk([[-0.3 + 2 * np.pi, 0.5], [0.3 + 2 * np.pi, 0.5]])
    hits2 = AN.detect_crossing(e, f)
    assert len(hits2) == 1


def test_exclusion_radius_skips_origin():
    mk = lambda pts, origin: AN.BranchCurve(
        points=np.array(pts, float),
        arclengths=np.zeros(len(pts)),
        side="unstable",
        origin=np.array(origin, float),
        eigenvalue=2.0,
    )
    a = mk([[1.0, 0.0], [1.0, 1.0]], [1.0, 0.5])
    b = mk([[0.5, 0.5], [1.5, 0.5]], [1.0, 0.5])
    assert AN.detect_crossing(a, b, exclude_radius=0.2) == []


def test_reversal_symmetry(ellipsoid_map):
    assert AN.reversal_symmetry_defect(
        ellipsoid_map, [(0.8, 1.0), (2.0, 0.6)]
    ) <= 1e-6


def test_orbit_csv(tmp_path, sphere_map):
    orb = sphere_map.orbit(np.array([1.0, 1.2]), 3)
    path = tmp_path / "orbit.csv"
    AN.orbit_to_csv(path, orb)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "phi,y,arclength"
    assert len(lines) == 5
