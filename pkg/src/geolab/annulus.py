"""Birkhoff annulus map for convex surfaces in R^3 (d = 1).

A simple closed geodesic gamma in a symmetry plane divides the surface
into two hemispheres.  Interior annulus points (phi, y) lift to the unit
tangent vector at gamma(phi L / 2pi) making angle y with gamma' and
pointing into the designated hemisphere; the map returns the next
crossing of gamma with the velocity again pointing into that hemisphere
(Birkhoff's ascending-return convention: on the round sphere the map is
the identity with tau = 2pi).  The two lifts of a transversally crossing
closed geodesic appear as the points of one period-2 orbit geometry; under
the ascending convention each is a fixed point, so fixed-point searches
run for both m = 1 and m = 2.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .accel import jitted
from .config import DEFAULT_INT, DEFAULT_TOL
from .errors import (
    ArclengthBudgetExceeded,
    MapEvaluationFailed,
    NewtonDiverged,
    NoReturnWithinTmax,
    NotConvex,
)
from . import integrate as it
from .flow import PhaseState, joachimsthal
from .poincare import classify, orbit_trajectory
from .surface import certify_strict_convexity, evaluate_geometry


class ClosedCurveR3:
    """Dense samples of a closed geodesic in R^3 with Hermite evaluation."""

    def __init__(self, spec, monodromy_result, n_samples=4096,
                 settings=DEFAULT_INT):
        traj = orbit_trajectory(spec, monodromy_result, n_samples=n_samples,
                                settings=settings)
        self.spec = spec
        self.L = float(monodromy_result.period)
        self.ts = traj.ts
        self.xs = traj.positions().copy()
        self.us = traj.velocities().copy()
        self.dt = float(self.ts[1] - self.ts[0])
        self.dus = np.empty_like(self.us)
        for i in range(len(self.ts)):
            geom = evaluate_geometry(spec, self.xs[i])
            kap = float(self.us[i] @ geom.C @ self.us[i])
            self.dus[i] = kap * geom.normal

    def point(self, t):
        """(gamma(t), gamma'(t)) by cubic Hermite (x from u, u from udot)."""
        t = float(t) % self.L
        i = min(int(t / self.dt), len(self.ts) - 2)
        th = (t - self.ts[i]) / self.dt
        h00 = 2 * th**3 - 3 * th**2 + 1
        h10 = (th**3 - 2 * th**2 + th) * self.dt
        h01 = -2 * th**3 + 3 * th**2
        h11 = (th**3 - th**2) * self.dt
        x = h00 * self.xs[i] + h10 * self.us[i] + h01 * self.xs[i + 1] + h11 * self.us[i + 1]
        u = h00 * self.us[i] + h10 * self.dus[i] + h01 * self.us[i + 1] + h11 * self.dus[i + 1]
        return x, u / np.linalg.norm(u)

    def locate(self, x):
        """Arc parameter t with <x - gamma(t), gamma'(t)> = 0, nearest to x."""
        d2 = np.sum((self.xs - x) ** 2, axis=1)
        i = int(np.argmin(d2))
        t = self.ts[i]
        for _ in range(20):
            p, u = self.point(t)
            r = float((x - p) @ u)
            if abs(r) < 1e-13:
                break
            t = (t + r) % self.L
        return t % self.L

    def planarity_defect(self, normal, point=None):
        c = 0.0 if point is None else float(point @ normal)
        return float(np.max(np.abs(self.xs @ normal - c)))

    def max_symmetry_defect(self):
        """|gamma(t + L/2) + gamma(t)| for centrally symmetric curves."""
        m = len(self.ts) - 1
        half = m // 2
        return float(np.max(np.linalg.norm(self.xs[:half] + self.xs[half:2 * half], axis=1)))


@dataclass
class AnnulusMap:
    """Handle for the global return map P and transit time tau."""

    spec: object
    curve: ClosedCurveR3
    normal: np.ndarray
    settings: object = DEFAULT_INT
    tmax: float = DEFAULT_TOL.t_max_return
    t_skip: float = 0.1

    @property
    def L(self):
        return self.curve.L

    def lift(self, phi, y):
        t = (phi % (2 * np.pi)) * self.L / (2 * np.pi)
        x, that = self.curve.point(t)
        geom = evaluate_geometry(self.spec, x)
        w = np.cross(geom.normal, that)
        if float(w @ self.normal) < 0:
            w = -w
        w /= np.linalg.norm(w)
        u = np.cos(y) * that + np.sin(y) * w
        return PhaseState(x, u)

    def read(self, s):
        t = self.curve.locate(s.x)
        x, that = self.curve.point(t)
        geom = evaluate_geometry(self.spec, x)
        w = np.cross(geom.normal, that)
        if float(w @ self.normal) < 0:
            w = -w
        w /= np.linalg.norm(w)
        phi = 2 * np.pi * t / self.L
        y = float(np.arctan2(s.u @ w, s.u @ that))
        return np.array([phi % (2 * np.pi), y])

    def step(self, z, m=1, direction=1):
        """P^m (direction=+1) or P^{-m} (direction=-1).  Returns (z', tau)."""
        phi, y = float(z[0]), float(z[1])
        if not 0.0 < y < np.pi:
            raise MapEvaluationFailed(f"interior points need y in (0, pi); got {y}")
        s = self.lift(phi, y)
        y0 = np.concatenate([s.x, s.u])
        st = self.settings
        yh, th, status, hits = it.integrate_events(
            self.spec.pack(), y0, 0.0, self.curve.xs[0], self.normal, 1.0,
            int(m), self.t_skip, self.tmax * m,
            st.rtol, st.atol, st.h0, 1, st.proj_tol, float(direction), st.h_max,
        )
        if status != it.OK:
            raise NoReturnWithinTmax(
                f"annulus map found {hits}/{m} returns (status {status})"
            )
        n = self.spec.n
        z1 = self.read(PhaseState(yh[:n], yh[n : 2 * n]))
        return z1, abs(th)

    def tau(self, z):
        return self.step(z)[1]

    def orbit(self, z, n_iter, m=1, direction=1):
        out = np.empty((n_iter + 1, 2))
        out[0] = z
        cur = np.asarray(z, float)
        for i in range(n_iter):
            cur, _ = self.step(cur, m=m, direction=direction)
            out[i + 1] = cur
        return out

    def jacobian(self, z, m=1, direction=1, h=1e-6):
        J = np.empty((2, 2))
        for j in range(2):
            dz = np.zeros(2)
            dz[j] = h
            fp, _ = self.step(np.asarray(z) + dz, m=m, direction=direction)
            fm, _ = self.step(np.asarray(z) - dz, m=m, direction=direction)
            diff = fp - fm
            diff[0] = (diff[0] + np.pi) % (2 * np.pi) - np.pi
            J[:, j] = diff / (2 * h)
        return J


def build_annulus_map(spec, gamma_result, normal, settings=DEFAULT_INT,
                      convexity_budget=2000, convexity_report=None,
                      planarity_tol=1e-7, seed=0):
    """Construct the Birkhoff annulus map over a simple closed geodesic.

    Preconditions: the surface is strictly convex (sampled certificate)
    and gamma lies in the plane through the origin with the given normal
    (our scenario sections are symmetry planes).
    """
    if convexity_report is None:
        convexity_report = certify_strict_convexity(
            spec, sample_budget=convexity_budget, seed=seed
        )
    if not convexity_report.convex:
        raise NotConvex(
            f"min sampled curvature {convexity_report.min_kappa:.3g}"
        )
    normal = np.asarray(normal, float)
    normal = normal / np.linalg.norm(normal)
    curve = ClosedCurveR3(spec, gamma_result, settings=settings)
    defect = curve.planarity_defect(normal)
    if defect > planarity_tol:
        raise MapEvaluationFailed(
            f"closed geodesic is not planar w.r.t. the section plane "
            f"(defect {defect:.3g})"
        )
    return AnnulusMap(spec=spec, curve=curve, normal=normal, settings=settings)


@dataclass
class AnnulusFixedPoint:
    z: np.ndarray
    m: int
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    label: str
    residual: float

    @property
    def unstable_eigenvalue(self):
        return self.eigenvalues[int(np.argmax(np.abs(self.eigenvalues)))]


def _wrap_delta(dz):
    out = np.array(dz, float)
    out[0] = (out[0] + np.pi) % (2 * np.pi) - np.pi
    return out


def annulus_fixed_points(amap, seeds, m=1, tol_res=1e-9, max_iter=40,
                         fd_step=1e-6, classify_kwargs=None):
    """Newton on P^m(z) - z over a seed list; deduplicated results."""
    found = []
    for z0 in seeds:
        z = np.array(z0, float)
        try:
            for _ in range(max_iter):
                pz, _ = amap.step(z, m=m)
                F = _wrap_delta(pz - z)
                res = float(np.linalg.norm(F))
                if res <= tol_res:
                    break
                J = amap.jacobian(z, m=m, h=fd_step)
                try:
                    step = np.linalg.solve(J - np.eye(2), -F)
                except np.linalg.LinAlgError:
                    raise NewtonDiverged("singular DP - I")
                lam = 1.0
                improved = False
                for _ in range(8):
                    z_try = z + lam * step
                    z_try[0] %= 2 * np.pi
                    if not 1e-4 < z_try[1] < np.pi - 1e-4:
                        lam *= 0.5
                        continue
                    pz_t, _ = amap.step(z_try, m=m)
                    res_t = float(np.linalg.norm(_wrap_delta(pz_t - z_try)))
                    if res_t < res:
                        z = z_try
                        improved = True
                        break
                    lam *= 0.5
                if not improved:
                    raise NewtonDiverged(f"stalled at residual {res:.3e}")
            else:
                raise NewtonDiverged(f"no convergence from seed {z0}")
        except (NewtonDiverged, NoReturnWithinTmax, MapEvaluationFailed):
            continue
        pz, _ = amap.step(z, m=m)
        res = float(np.linalg.norm(_wrap_delta(pz - z)))
        if res > tol_res:
            continue
        if any(
            np.linalg.norm(_wrap_delta(z - f.z)) < 1e-5 for f in found
        ):
            continue
        J = amap.jacobian(z, m=m, h=fd_step)
        cls = classify(J, **(classify_kwargs or {"tol_symp": 1e-4}))
        found.append(
            AnnulusFixedPoint(
                z=z,
                m=m,
                jacobian=J,
                eigenvalues=cls.eigenvalues,
                label=cls.label,
                residual=res,
            )
        )
    return found


@dataclass
class BranchCurve:
    points: np.ndarray          # (k, 2) with unwrapped phi
    arclengths: np.ndarray
    side: str
    origin: np.ndarray
    eigenvalue: float
    growth_ratios: list = field(default_factory=list)
    truncated: bool = False

    @property
    def arclength(self):
        return float(self.arclengths[-1]) if len(self.arclengths) else 0.0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["phi", "y", "arclength"])
            for p, s in zip(self.points, self.arclengths):
                w.writerow([repr(p[0] % (2 * np.pi)), repr(p[1]), repr(s)])


def grow_branches(amap, fp, side, max_arclength, dmax=1e-2, angle_max=0.2,
                  seed_offset=1e-6, max_level=60, max_points=20000,
                  orientation=1):
    """Grow one stable or unstable branch of a hyperbolic fixed point.

    Points are parametrized by (level k, fundamental parameter s): the
    branch point is F^k(z* + s vhat) with F = P^m (unstable side) or
    P^{-m} (stable side); orientation = +-1 picks the branch along +-vhat.
    Chains are cached so each (k, s) pair costs one map evaluation; the
    s-grid refines adaptively in log s wherever the spacing or
    turning-angle caps are violated at some level.  Growth ends at the
    arclength budget, at a converged level cap (heteroclinic approach), or
    with ArclengthBudgetExceeded when the point cap fills first.
    """
    eigs = fp.eigenvalues
    Jm = fp.jacobian
    if side == "unstable":
        direction = 1
        idx = int(np.argmax(np.abs(eigs)))
    elif side == "stable":
        direction = -1
        idx = int(np.argmin(np.abs(eigs)))
    else:
        raise ValueError("side must be 'stable' or 'unstable'")
    lam = float(np.real(eigs[idx]))
    if abs(lam) < 1.0 + 1e-4 and side == "unstable":
        raise MapEvaluationFailed(f"|lambda| = {abs(lam):.6f} not hyperbolic")
    _, vecs = np.linalg.eig(Jm)
    v = np.real(vecs[:, idx])
    v = orientation * v / np.linalg.norm(v)
    Lam = abs(lam) if side == "unstable" else 1.0 / abs(lam)
    if max_arclength <= 0:
        return BranchCurve(
            points=np.array([fp.z]), arclengths=np.array([0.0]), side=side,
            origin=fp.z, eigenvalue=lam,
        )

    cache = {}

    def point_at(k, skey, s):
        key = (k, skey)
        if key in cache:
            return cache[key]
        if k == 0:
            z = fp.z + s * v
        else:
            parent = point_at(k - 1, skey, s)
            if parent is None:
                cache[key] = None
                return None
            try:
                z, _ = amap.step(parent, m=fp.m, direction=direction)
            except (NoReturnWithinTmax, MapEvaluationFailed):
                cache[key] = None
                return None
            z = parent + _wrap_delta(z - parent)  # unwrap phi continuously
        cache[key] = z
        return z

    # fundamental domain [seed_offset, Lam * seed_offset], refined in log s
    n0 = 12
    svals = list(np.exp(np.linspace(np.log(seed_offset),
                                    np.log(Lam * seed_offset), n0)))
    pts = [np.array(fp.z, float)]
    arcs = [0.0]
    ratios = []
    truncated = False
    level = 0
    prev_level_len = None
    while level <= max_level:
        level_len = 0.0
        i = 0
        appended = 0
        while i < len(svals) - 1:
            s_a, s_b = svals[i], svals[i + 1]
            za = point_at(level, round(np.log(s_a), 12), s_a)
            zb = point_at(level, round(np.log(s_b), 12), s_b)
            if za is None or zb is None:
                truncated = True
                break
            if i == 0 and level == 0:
                pts.append(za)
                arcs.append(arcs[-1] + float(np.linalg.norm(za - pts[-2])))
            # different chains may unwrap phi with different 2 pi offsets
            zb = pts[-1] + _wrap_delta(zb - pts[-1])
            gap = float(np.linalg.norm(zb - pts[-1]))
            ok_angle = True
            if len(pts) >= 2:
                t_prev = pts[-1] - pts[-2]
                t_new = zb - pts[-1]
                np_prev = np.linalg.norm(t_prev)
                np_new = np.linalg.norm(t_new)
                if np_prev > 1e-14 and np_new > 1e-14:
                    cosang = float(t_prev @ t_new) / (np_prev * np_new)
                    ok_angle = cosang > np.cos(angle_max)
            if (gap > dmax or not ok_angle) and len(svals) < 100000:
                s_mid = np.sqrt(s_a * s_b)
                if s_mid / s_a > 1.0 + 1e-12 and s_b / s_mid > 1.0 + 1e-12:
                    svals.insert(i + 1, s_mid)
                    continue
            pts.append(zb)
            arcs.append(arcs[-1] + gap)
            level_len += gap
            appended += 1
            i += 1
            if arcs[-1] >= max_arclength or len(pts) >= max_points:
                break
        if prev_level_len not in (None, 0.0):
            ratios.append(level_len / prev_level_len)
        prev_level_len = level_len
        if truncated or arcs[-1] >= max_arclength:
            break
        if level > 2 and level_len < 1e-4 * max(arcs[-1], dmax):
            break  # converged onto an invariant point (heteroclinic approach)
        if len(pts) >= max_points:
            raise ArclengthBudgetExceeded(
                f"point cap {max_points} filled at arclength {arcs[-1]:.3g} "
                f"< budget {max_arclength}"
            )
        level += 1
    return BranchCurve(
        points=np.array(pts),
        arclengths=np.array(arcs),
        side=side,
        origin=fp.z,
        eigenvalue=lam,
        growth_ratios=ratios,
        truncated=truncated,
    )


@jitted
def _segment_sweep(A, B, period, floor, excl, excl_r, out, max_out):
    """All transversal intersections between polylines A and B on the
    cylinder (phi wraps with the given period).  Rows of `out`:
    (phi, y, angle, i, j); returns the count."""
    na = A.shape[0]
    nb = B.shape[0]
    cnt = 0
    for i in range(na - 1):
        ax1 = A[i, 0]
        ay1 = A[i, 1]
        ax2 = A[i + 1, 0]
        ay2 = A[i + 1, 1]
        rx = ax2 - ax1
        ry = ay2 - ay1
        for j in range(nb - 1):
            k0 = np.floor((ax1 - B[j, 0]) / period + 0.5)
            for dk in range(-1, 2):
                shift = (k0 + dk) * period
                bx1 = B[j, 0] + shift
                by1 = B[j, 1]
                bx2 = B[j + 1, 0] + shift
                by2 = B[j + 1, 1]
                sx = bx2 - bx1
                sy = by2 - by1
                denom = rx * sy - ry * sx
                if denom == 0.0:
                    continue
                qx = bx1 - ax1
                qy = by1 - ay1
                t = (qx * sy - qy * sx) / denom
                u = (qx * ry - qy * rx) / denom
                if t < 0.0 or t > 1.0 or u < 0.0 or u > 1.0:
                    continue
                px = ax1 + t * rx
                py = ay1 + t * ry
                skip = False
                for c in range(excl.shape[0]):
                    dphi = px - excl[c, 0]
                    dphi -= period * np.floor(dphi / period + 0.5)
                    dy = py - excl[c, 1]
                    if dphi * dphi + dy * dy < excl_r * excl_r:
                        skip = True
                        break
                if skip:
                    continue
                cross = abs(denom)
                dot = rx * sx + ry * sy
                ang = np.arctan2(cross, dot)
                if ang > np.pi / 2:
                    ang = np.pi - ang
                if cnt < max_out:
                    out[cnt, 0] = px - period * np.floor(px / period)
                    out[cnt, 1] = py
                    out[cnt, 2] = ang
                    out[cnt, 3] = i
                    out[cnt, 4] = j
                    cnt += 1
    return cnt


def _local_tangent(points, seg, p, half_width=4):
    """Tangent of the polyline's underlying curve at the point p near
    segment `seg`, from a local least-squares quadratic in arclength.

    Raw chord directions carry O(spacing * curvature) noise; evaluating a
    fitted parabola at the intersection point brings the error down to
    O(spacing^2)."""
    lo = max(seg - half_width + 1, 0)
    hi = min(seg + half_width + 2, len(points))
    W = points[lo:hi]
    if len(W) < 3:
        if len(W) == 2:
            t = W[1] - W[0]
            nt = np.linalg.norm(t)
            return t / nt if nt > 0 else None
        return None
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(W, axis=0), axis=1))])
    # arc parameter of p: distance along the polyline to its projection
    s_star = s[seg - lo] + float(np.linalg.norm(p - W[seg - lo]))
    A = np.vstack([np.ones_like(s), s - s_star, (s - s_star) ** 2]).T
    coef, *_ = np.linalg.lstsq(A, W, rcond=None)
    t = coef[1]
    nt = np.linalg.norm(t)
    return t / nt if nt > 0 else None


def detect_crossing(branch_u, branch_s, angle_floor=1e-3, exclude_radius=1e-3,
                    exclude_points=None, max_out=8192, tangent_window=4):
    """Intersections between an unstable and a stable branch polyline.

    Intersection points come from a segment-pair sweep (with the 2 pi wrap
    in phi); the crossing angle at each hit is recomputed from windowed
    tangent fits of both polylines.  Crossings with angle >= angle_floor
    are flagged transverse; the rest are reported undetermined.  Returns a
    list of dicts sorted by descending angle.
    """
    if len(branch_u.points) < 2 or len(branch_s.points) < 2:
        return []
    if exclude_points is None:
        exclude_points = [branch_u.origin, branch_s.origin]
    excl = np.array([[p[0], p[1]] for p in exclude_points], float)
    out = np.empty((max_out, 5))
    U = np.asarray(branch_u.points, float)
    S = np.asarray(branch_s.points, float)
    cnt = _segment_sweep(
        U, S, 2 * np.pi, angle_floor, excl, exclude_radius, out, max_out
    )
    hits = []
    for r in range(cnt):
        i, j = int(out[r, 3]), int(out[r, 4])
        p = np.array([out[r, 0], out[r, 1]])
        pu = U[i] + _wrap_delta(p - U[i])
        ps = S[j] + _wrap_delta(p - S[j])
        tu = _local_tangent(U, i, pu, tangent_window)
        tsv = _local_tangent(S, j, ps, tangent_window)
        if tu is None or tsv is None:
            ang = float(out[r, 2])
        else:
            cross = abs(tu[0] * tsv[1] - tu[1] * tsv[0])
            dot = abs(float(tu @ tsv))
            ang = float(np.arctan2(cross, dot))
        hits.append(
            {
                "point": [float(out[r, 0]), float(out[r, 1])],
                "angle": ang,
                "segment_u": i,
                "segment_s": j,
                "transverse": bool(ang >= angle_floor),
            }
        )
    hits.sort(key=lambda h: -h["angle"])
    return hits


def crossings_to_json(path, hits, meta=None):
    payload = {"crossings": hits, "meta": meta or {}}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
    return payload


def orbit_to_csv(path, orbit):
    arcs = np.concatenate(
        [[0.0], np.cumsum(np.linalg.norm(np.diff(orbit, axis=0), axis=1))]
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["phi", "y", "arclength"])
        for p, s in zip(orbit, arcs):
            w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(s))])


def invariant_curve_confinement(amap, D, orbit):
    """Joachimsthal level-set oracle: annulus distance proxy of orbit points
    from the invariant level curve through their median value."""
    vals = []
    grads = []
    h = 1e-5
    for z in orbit:
        s = amap.lift(z[0], z[1])
        vals.append(joachimsthal(D, s))
        gp = []
        for j in range(2):
            dz = np.zeros(2)
            dz[j] = h
            sp = amap.lift(*(z + dz))
            sm = amap.lift(*(z - dz))
            gp.append((joachimsthal(D, sp) - joachimsthal(D, sm)) / (2 * h))
        grads.append(np.linalg.norm(gp))
    vals = np.array(vals)
    grads = np.maximum(np.array(grads), 1e-12)
    ref = np.median(vals)
    return float(np.max(np.abs(vals - ref) / grads))


def reversal_symmetry_defect(amap, probes):
    """|P(phi + pi, y) - (P_phi + pi, P_y)| for centrally symmetric surfaces."""
    worst = 0.0
    for phi, y in probes:
        a, _ = amap.step(np.array([phi, y]))
        b, _ = amap.step(np.array([(phi + np.pi) % (2 * np.pi), y]))
        delta = _wrap_delta(b - np.array([(a[0] + np.pi) % (2 * np.pi), a[1]]))
        worst = max(worst, float(np.linalg.norm(delta)))
    return worst


def boundary_continuity_defect(amap, phis, mesh=(1e-2, 5e-3, 2.5e-3)):
    """Consistency of the continuous extension of (P, tau) to y = 0.

    Linear extrapolations to y = 0 from consecutive mesh pairs must agree;
    their maximum discrepancy estimates the extension error."""
    worst = 0.0
    for phi in phis:
        vals = []
        for y in mesh:
            z, tau = amap.step(np.array([phi, y]))
            vals.append(np.array([z[0], z[1], tau]))
        extrapolations = []
        for k in range(len(mesh) - 1):
            y1, y2 = mesh[k], mesh[k + 1]
            f1, f2 = vals[k], vals[k + 1]
            extrapolations.append(f2 + (f1 - f2) * (0.0 - y2) / (y1 - y2))
        for k in range(len(extrapolations) - 1):
            d = np.abs(extrapolations[k] - extrapolations[k + 1])
            d[0] = min(d[0], 2 * np.pi - d[0])
            worst = max(worst, float(np.max(d)))
    return worst
