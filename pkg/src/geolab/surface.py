"""Implicit hypersurfaces M = {Q = 0} and their pointwise geometry.

All differential-geometric quantities come from the exact tape derivatives
of Q: the inward unit normal n = -grad Q/|grad Q|, the curvature matrix
C = Hess Q/|grad Q|, the shape operator S u = C u - <C u, n> n, and the
normal curvature kappa(x, u) = <C u, u>.
"""

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .config import DEFAULT_TOL
from .errors import (
    NoSurfacePointsFound,
    NotTangent,
    OffSurface,
    ProjectionDiverged,
    SingularGradient,
)
from .kernels import pack_tape, project_point, surf_v, surf_vg, surf_vgh


class SurfaceSpec:
    """A level-set surface Q: R^n -> R given as an expression tree.

    Parameters
    ----------
    source : str or Expr
        Infix expression over x1..xn (with ``params`` substituted) or an
        already-built expression tree.
    n : int
        Ambient dimension (n = d + 2 >= 3).
    params : dict, optional
        Named constants appearing in the expression.
    normalized : bool
        Marks that perturbation formulas should use the on-surface
        rescale Q/|grad Q| when assembling metric perturbations.
    bbox : (lo, hi), optional
        Bounding box used by samplers; defaults to [-3, 3]^n.
    """

    def __init__(self, source, n, params=None, normalized=False, bbox=None, name=""):
        if n < 3:
            raise ValueError("ambient dimension must be >= 3")
        self.n = int(n)
        self.params = dict(params or {})
        if isinstance(source, str):
            self.text = source
            self.expr = ex.parse(source, n, self.params)
        else:
            self.text = None
            self.expr = source
        self.tape = ex.compile_tape(self.expr, n)
        self.normalized = bool(normalized)
        self.name = name
        if bbox is None:
            self.bbox = (-3.0 * np.ones(n), 3.0 * np.ones(n))
        else:
            self.bbox = (np.asarray(bbox[0], float), np.asarray(bbox[1], float))
        self._pack = pack_tape(self.tape, self.n)

    @property
    def d(self):
        return self.n - 2

    def pack(self):
        return self._pack

    def value(self, x):
        return surf_v(self._pack, np.asarray(x, float))

    def gradient(self, x):
        g = np.empty(self.n)
        surf_vg(self._pack, np.asarray(x, float), g)
        return g

    def hessian(self, x):
        g = np.empty(self.n)
        H = np.empty((self.n, self.n))
        surf_vgh(self._pack, np.asarray(x, float), g, H)
        return H

    def value_grad_hess(self, x):
        g = np.empty(self.n)
        H = np.empty((self.n, self.n))
        v = surf_vgh(self._pack, np.asarray(x, float), g, H)
        return v, g, H

    def normalized_gradient_hessian(self, x):
        """Gradient and Hessian of Q/|grad Q| valid at on-surface points."""
        v, g, H = self.value_grad_hess(x)
        gn = np.linalg.norm(g)
        r = 1.0 / gn
        dr = -(H @ g) / gn**3
        grad_t = r * g + v * dr
        hess_t = r * H + np.outer(g, dr) + np.outer(dr, g)
        return grad_t, hess_t

    def rescale(self, c):
        """Surface given by c*Q (same zero set)."""
        return SurfaceSpec(
            ex.as_expr(c) * self.expr,
            self.n,
            normalized=self.normalized,
            bbox=self.bbox,
            name=self.name,
        )

    def describe(self):
        return {
            "n": self.n,
            "expression": self.text,
            "params": self.params,
            "normalized": self.normalized,
            "name": self.name,
        }


def sphere(n=3):
    terms = " + ".join(f"x{i}^2" for i in range(1, n + 1))
    return SurfaceSpec(f"0.5*({terms} - 1)", n, name="sphere")


def ellipsoid(semiaxes):
    n = len(semiaxes)
    params = {f"a{i}": float(a) for i, a in enumerate(semiaxes, start=1)}
    terms = " + ".join(f"x{i}^2/a{i}^2" for i in range(1, n + 1))
    return SurfaceSpec(
        f"0.5*({terms} - 1)",
        n,
        params=params,
        name="ellipsoid(" + ",".join(str(a) for a in semiaxes) + ")",
    )


def torus(R=1.0, r=0.4):
    """Implicit torus in R^3; not convex (saddle region on the inner ring)."""
    return SurfaceSpec(
        "(x1^2 + x2^2 + x3^2 + R^2 - r^2)^2 - 4*R^2*(x1^2 + x2^2)",
        3,
        params={"R": R, "r": r},
        name=f"torus({R},{r})",
    )


@dataclass
class PointGeometry:
    """Pointwise geometry of the level set at an accepted surface point."""

    x: np.ndarray
    normal: np.ndarray
    C: np.ndarray
    grad: np.ndarray
    grad_norm: float


def evaluate_geometry(spec, x, tol=DEFAULT_TOL):
    """Unit inward normal and curvature matrix at x.

    Raises SingularGradient when |grad Q| <= tol.gradient and OffSurface
    when |Q(x)| > tol.surface.
    """
    x = np.asarray(x, float)
    v, g, H = spec.value_grad_hess(x)
    gn = np.linalg.norm(g)
    if gn <= tol.gradient:
        raise SingularGradient(f"|grad Q| = {gn:.3e} at {x}")
    if abs(v) > tol.surface:
        raise OffSurface(f"|Q(x)| = {abs(v):.3e} > {tol.surface:.1e}")
    return PointGeometry(x=x, normal=-g / gn, C=H / gn, grad=g, grad_norm=gn)


def shape_and_curvature(geom, u, tol=DEFAULT_TOL):
    """Shape operator image S(x)u (tangent) and normal curvature kappa."""
    u = np.asarray(u, float)
    un = np.linalg.norm(u)
    inner = abs(float(geom.grad @ u))
    if inner > tol.tangent * max(un * geom.grad_norm, 1e-300):
        raise NotTangent(
            f"<u, grad Q> = {inner:.3e} exceeds {tol.tangent:.1e} * |u||grad Q|"
        )
    Cu = geom.C @ u
    Su = Cu - (Cu @ geom.normal) * geom.normal
    kappa = float(Cu @ u)
    return Su, kappa


def project_to_surface(spec, x, tol=DEFAULT_TOL, max_iter=50):
    """Newton projection onto M along grad Q."""
    y = np.array(x, dtype=float)
    st = project_point(spec.pack(), y, tol.surface, max_iter)
    if st == 2:
        raise SingularGradient(f"projection hit a singular gradient near {x}")
    if st != 0:
        raise ProjectionDiverged(f"no convergence after {max_iter} iterations")
    return y


def tangent_basis(normal, against=None):
    """Orthonormal basis of the hyperplane orthogonal to ``normal`` (and to
    the optional extra vector ``against``)."""
    n = len(normal)
    vs = [np.asarray(normal, float)]
    if against is not None:
        vs.append(np.asarray(against, float))
    basis = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        for v in vs + basis:
            e = e - (e @ v) / (v @ v) * v
        nn = np.linalg.norm(e)
        if nn > 1e-8:
            basis.append(e / nn)
    want = n - len(vs)
    return np.array(basis[:want])


@dataclass
class ConvexityReport:
    convex: bool
    min_kappa: float
    witness_x: np.ndarray
    witness_u: np.ndarray
    n_points: int
    threshold: float
    failures: int = 0


def certify_strict_convexity(
    spec, sample_budget=10_000, threshold=1e-8, seed=0, tol=DEFAULT_TOL
):
    """Sampling certificate for strict convexity.

    Projects quasi-random box points onto M and minimizes the normal
    curvature over the tangent plane at each (exactly, via the smallest
    eigenvalue of the tangential curvature block).  This is evidence, not
    a proof.
    """
    rng = np.random.default_rng(seed)
    lo, hi = spec.bbox
    min_k = np.inf
    wx = None
    wu = None
    points = 0
    failures = 0
    attempts = 0
    while points < sample_budget and attempts < 20 * sample_budget:
        attempts += 1
        x0 = lo + (hi - lo) * rng.random(spec.n)
        try:
            x = project_to_surface(spec, x0, tol=tol)
        except (ProjectionDiverged, SingularGradient):
            failures += 1
            continue
        try:
            geom = evaluate_geometry(spec, x, tol=tol)
        except (OffSurface, SingularGradient):
            failures += 1
            continue
        T = tangent_basis(geom.normal)
        block = T @ geom.C @ T.T
        w, V = np.linalg.eigh(block)
        if w[0] < min_k:
            min_k = w[0]
            wx = x
            wu = V[:, 0] @ T
        points += 1
    if points == 0:
        raise NoSurfacePointsFound("projection failed for every sample")
    return ConvexityReport(
        convex=bool(min_k > threshold),
        min_kappa=float(min_k),
        witness_x=wx,
        witness_u=wu,
        n_points=points,
        threshold=threshold,
        failures=failures,
    )
