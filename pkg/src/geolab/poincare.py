"""Sections, return maps, closed-geodesic search, monodromy, and the
eigenvalue classification of periodic orbits.

The section at an anchor state is the affine plane through the anchor
orthogonal to the flow direction, restricted to the unit-speed level.
Section coordinates are (y, v): frame components of the position and
velocity offsets against a fixed tangent frame at the anchor.  The
linearized return map in these coordinates is symplectic for dy ^ dv.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_INT, DEFAULT_TOL
from .errors import (
    CollapseToPoint,
    NewtonDiverged,
    NoReturnWithinTmax,
    NotSymplectic,
)
from . import integrate as it
from .flow import PhaseState, raise_for_status
from .jets import omega_matrix
from .surface import evaluate_geometry, project_to_surface, tangent_basis
from .kernels import project_point, shorten_sweeps


@dataclass
class SectionSpec:
    """Transverse section at an anchor phase state."""

    spec: object
    anchor: PhaseState
    frame: np.ndarray        # (d, n) tangent vectors orthogonal to u and n
    normal: np.ndarray       # surface normal at the anchor
    radius: float = 0.5

    @classmethod
    def at(cls, spec, state, radius=0.5, tol=DEFAULT_TOL):
        geom = evaluate_geometry(spec, state.x, tol=tol)
        u = state.u / np.linalg.norm(state.u)
        E = tangent_basis(geom.normal, against=u)
        return cls(spec=spec, anchor=PhaseState(state.x, u), frame=E,
                   normal=geom.normal, radius=radius)

    @property
    def d(self):
        return self.frame.shape[0]

    def lift(self, z, tol=DEFAULT_TOL):
        """Phase state with section coordinates z = (y, v).

        The surface point is reached along the fixed anchor normal, so the
        frame reading of the lifted point is exactly y and the point stays
        on the section plane."""
        z = np.asarray(z, float)
        d = self.d
        if np.linalg.norm(z) > self.radius:
            raise ValueError(
                f"section point |z| = {np.linalg.norm(z):.3g} outside chart radius"
            )
        y, v = z[:d], z[d:]
        x = self.anchor.x + y @ self.frame
        for _ in range(50):
            qv, qg, _ = self.spec.value_grad_hess(x)
            if abs(qv) <= 1e-13:
                break
            x = x - qv / float(qg @ self.normal) * self.normal
        u = self.anchor.u + v @ self.frame
        _, g, _ = self.spec.value_grad_hess(x)
        u = u - (u @ g) / (g @ g) * g
        u = u / np.linalg.norm(u)
        return PhaseState(x, u)

    def read(self, s):
        """Section coordinates of a state on the section (exact inverse of
        the lift: the velocity part solves u_a + v E = c u + beta grad Q)."""
        dx = s.x - self.anchor.x
        y = self.frame @ dx
        _, g, _ = self.spec.value_grad_hess(s.x)
        u = s.u / np.linalg.norm(s.u)
        d = self.d
        n = len(u)
        A = np.empty((n, d + 2))
        for j in range(d):
            A[:, j] = self.frame[j]
        A[:, d] = -g
        A[:, d + 1] = -u
        w, *_ = np.linalg.lstsq(A, -self.anchor.u, rcond=None)
        return np.concatenate([y, w[:d]])


def return_map(spec, section, z, n_hits=1, settings=DEFAULT_INT, tol=DEFAULT_TOL,
               t_skip=0.1, tmax=None):
    """n_hits-th transverse return of the section point z.  Returns
    (z_return, return_time)."""
    s = section.lift(z, tol=tol)
    if tmax is None:
        tmax = tol.t_max_return
    y0 = np.concatenate([s.x, s.u])
    w = section.anchor.u
    yh, th, status, hits = it.integrate_events(
        spec.pack(), y0, 0.0, section.anchor.x, w, 1.0, n_hits, t_skip, tmax,
        settings.rtol, settings.atol, settings.h0, 1, settings.proj_tol, 1.0,
        settings.h_max,
    )
    if status != it.OK:
        raise NoReturnWithinTmax(f"{hits} of {n_hits} returns within {tmax}")
    n = spec.n
    return section.read(PhaseState(yh[:n], yh[n : 2 * n])), th


def _section_columns(spec, section, s):
    """Variational initial columns spanning the section tangent space."""
    n = spec.n
    d = section.d
    _, g, H = spec.value_grad_hess(s.x)
    gn2 = float(g @ g)
    cols = []
    for j in range(d):
        dx = section.frame[j]
        du = -(float((H @ dx) @ s.u) / gn2) * g
        cols.append(np.concatenate([dx, du]))
    for j in range(d):
        cols.append(np.concatenate([np.zeros(n), section.frame[j]]))
    return np.array(cols)


def return_map_jacobian(spec, section, z, settings=DEFAULT_INT, tol=DEFAULT_TOL,
                        t_skip=0.1, tmax=None, n_hits=1):
    """Linearized return map DP at z via the variational flow, reduced to
    section coordinates with the arrival-time correction."""
    z_ret, T = return_map(spec, section, z, n_hits=n_hits, settings=settings,
                          tol=tol, t_skip=t_skip, tmax=tmax)
    s = section.lift(z, tol=tol)
    n = spec.n
    d = section.d
    V0 = _section_columns(spec, section, s)
    y0 = np.concatenate([s.x, s.u, V0.reshape(-1)])
    yf, status, *_ = it.integrate_adaptive(
        spec.pack(), 2, y0, 0.0, float(T),
        settings.rtol, settings.atol, settings.h0,
        settings.max_steps, 1, settings.proj_tol, 0, settings.h_max,
    )
    raise_for_status(status, "(return-map jacobian)")
    xT = yf[:n]
    uT = yf[n : 2 * n]
    _, gT, HT = spec.value_grad_hess(xT)
    gnT = np.linalg.norm(gT)
    kapT = float(uT @ HT @ uT) / gnT
    udotT = -kapT * gT / gnT
    w = section.anchor.u
    M = np.empty((2 * d, 2 * d))
    for c in range(2 * d):
        off = 2 * n + c * 2 * n
        dx = yf[off : off + n].copy()
        du = yf[off + n : off + 2 * n].copy()
        dt_c = -float(dx @ w) / float(uT @ w)
        dx += dt_c * uT
        du += dt_c * udotT
        for i in range(d):
            M[i, c] = float(dx @ section.frame[i])
            M[d + i, c] = float(du @ section.frame[i])
    return M, z_ret, T


def return_map_jacobian_fd(spec, section, z, h=3e-6, settings=DEFAULT_INT,
                           tol=DEFAULT_TOL, t_skip=0.1, n_hits=1):
    """Independent finite-difference oracle for the return-map Jacobian."""
    d = section.d
    m = 2 * d
    J = np.empty((m, m))
    for j in range(m):
        dz = np.zeros(m)
        dz[j] = h
        fp, _ = return_map(spec, section, z + dz, n_hits=n_hits,
                           settings=settings, tol=tol, t_skip=t_skip)
        fm, _ = return_map(spec, section, z - dz, n_hits=n_hits,
                           settings=settings, tol=tol, t_skip=t_skip)
        J[:, j] = (fp - fm) / (2 * h)
    return J


@dataclass
class ClassifyResult:
    label: str
    q: int
    parabolic: bool
    degenerate: bool
    eigenvalues: np.ndarray
    symplectic_defect: float
    pairing_defect: float


def symplectic_defect(M):
    d = M.shape[0] // 2
    O = omega_matrix(d)
    return float(np.max(np.abs(M.T @ O @ M - O)))


def reciprocal_pairing_defect(eigs):
    out = 0.0
    for lam in eigs:
        out = max(out, float(min(abs(lam * mu - 1.0) for mu in eigs)))
    return out


def classify(M, tol_unit=1e-6, tol_root=1e-6, n_max=20, tol_symp=1e-5):
    """Eigenvalue classification of a symplectic section-map linearization.

    hyperbolic: no eigenvalue of absolute value 1 (within tol_unit);
    parabolic: 1 is an eigenvalue; degenerate: some eigenvalue is a root of
    unity of order <= n_max; elliptic: nondegenerate and nonhyperbolic.
    q counts conjugate pairs on the unit circle.
    """
    M = np.asarray(M, float)
    sd = symplectic_defect(M)
    if sd > tol_symp:
        raise NotSymplectic(f"|M^T Omega M - Omega| = {sd:.3e}")
    eigs = np.linalg.eigvals(M)
    pd = reciprocal_pairing_defect(eigs)
    on_circle = np.abs(np.abs(eigs) - 1.0) <= tol_unit
    q = int(np.sum(on_circle)) // 2
    parabolic = bool(np.any(np.abs(eigs - 1.0) <= tol_root))
    degenerate = parabolic
    for lam in eigs[on_circle]:
        for order in range(1, n_max + 1):
            if abs(lam**order - 1.0) <= tol_root * order:
                degenerate = True
                break
    if not np.any(on_circle):
        label = "hyperbolic"
    elif parabolic:
        label = "parabolic"
    elif degenerate:
        label = "degenerate"
    else:
        label = "elliptic"
    return ClassifyResult(
        label=label,
        q=q,
        parabolic=parabolic,
        degenerate=degenerate,
        eigenvalues=eigs,
        symplectic_defect=sd,
        pairing_defect=pd,
    )


@dataclass
class MonodromyResult:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    classification: ClassifyResult
    period: float
    residual: float
    state: PhaseState
    fd_agreement: float = None

    def record(self):
        return {
            "period": self.period,
            "residual": self.residual,
            "label": self.classification.label,
            "q": self.classification.q,
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "symplectic_defect": self.classification.symplectic_defect,
            "pairing_defect": self.classification.pairing_defect,
            "state_x": self.state.x.tolist(),
            "state_u": self.state.u.tolist(),
        }


def find_closed_geodesic(spec, seed, settings=DEFAULT_INT, tol=DEFAULT_TOL,
                         max_iter=30, t_skip=0.1, n_hits=1, classify_kwargs=None):
    """Newton shooting on P(z) - z from a seed state near a closed orbit."""
    seed = PhaseState(np.asarray(seed.x, float), np.asarray(seed.u, float))
    seed.u /= np.linalg.norm(seed.u)
    section = SectionSpec.at(spec, seed, tol=tol)
    z = np.zeros(2 * section.d)
    z_ret, T = return_map(spec, section, z, n_hits=n_hits, settings=settings,
                          tol=tol, t_skip=t_skip)
    res = float(np.linalg.norm(z_ret - z))
    if res > tol.capture:
        raise NewtonDiverged(
            f"seed residual {res:.3g} outside the capture radius {tol.capture}"
        )
    for _ in range(max_iter):
        if res <= tol.newton:
            break
        M, z_ret, T = return_map_jacobian(spec, section, z, settings=settings,
                                          tol=tol, t_skip=t_skip, n_hits=n_hits)
        F = z_ret - z
        try:
            step = np.linalg.solve(M - np.eye(2 * section.d), -F)
        except np.linalg.LinAlgError:
            raise NewtonDiverged("singular DP - I (totally degenerate orbit?)")
        lam = 1.0
        for _ in range(8):
            z_try = z + lam * step
            try:
                z_new, _ = return_map(spec, section, z_try, n_hits=n_hits,
                                      settings=settings, tol=tol, t_skip=t_skip)
            except NoReturnWithinTmax:
                lam *= 0.5
                continue
            res_try = float(np.linalg.norm(z_new - z_try))
            if res_try < res:
                z = z_try
                z_ret = z_new
                res = res_try
                break
            lam *= 0.5
        else:
            raise NewtonDiverged(f"no decrease from residual {res:.3e}")
    if res > tol.newton:
        raise NewtonDiverged(f"residual {res:.3e} after {max_iter} iterations")
    M, z_ret, T = return_map_jacobian(spec, section, z, settings=settings,
                                      tol=tol, t_skip=t_skip, n_hits=n_hits)
    cls = classify(M, **(classify_kwargs or {}))
    state = section.lift(z, tol=tol)
    return MonodromyResult(
        matrix=M,
        eigenvalues=cls.eigenvalues,
        classification=cls,
        period=float(T),
        residual=res,
        state=state,
    )


def orbit_trajectory(spec, result, n_samples=2000, settings=DEFAULT_INT):
    """Dense one-period trajectory of a converged closed geodesic."""
    y0 = np.concatenate([result.state.x, result.state.u])
    dt = result.period / n_samples
    ys, status = it.integrate_grid(spec.pack(), 0, y0, 0.0, dt, n_samples, 1,
                                   settings.proj_tol)
    raise_for_status(status, "(orbit sampling)")
    ts = np.linspace(0.0, result.period, n_samples + 1)
    from .flow import Trajectory

    return Trajectory(ts=ts, ys=ys, n=spec.n, stats={})


def save_registry(path, spec, results):
    payload = {
        "surface": spec.describe(),
        "orbits": [r.record() for r in results],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
    return payload


# ----------------------------------------------------------------------
# Birkhoff curve shortening
# ----------------------------------------------------------------------

@dataclass
class ShortenResult:
    polyline: np.ndarray
    length: float
    sweeps: int
    converged: bool
    seed: PhaseState


def _polyline_length(P):
    return float(np.sum(np.linalg.norm(np.roll(P, -1, axis=0) - P, axis=1)))


def birkhoff_shorten(spec, polyline, max_sweeps=40000, tol_decrease=1e-10,
                     collapse_length=1e-2, tol=DEFAULT_TOL):
    """Alternating midpoint shortening of a closed polyline on M.

    Each sweep replaces alternating vertices by the projected chord
    midpoint of their neighbours; for nearby points this approximates the
    geodesic midpoint.  The relaxation runs coarse-to-fine (the lowest
    surviving Fourier mode of the update damps like 1/m^2, so coarse
    levels do the large-scale work).  Stops when the length decrease per
    sweep falls below tol_decrease at the finest level.  Raises
    CollapseToPoint for contractible curves that shrink away.
    """
    P = np.array([project_to_surface(spec, p, tol=tol) for p in polyline])
    pk = spec.pack()
    m = len(P)
    initial_diameter = float(
        np.max(np.linalg.norm(P - P.mean(axis=0), axis=1))
    )
    levels = [P]
    while len(levels[-1]) > 48:
        levels.append(levels[-1][::2].copy())
    sweeps = 0
    converged = False
    for li, Q in enumerate(reversed(levels)):
        final = li == len(levels) - 1
        if li > 0:
            # upsample the previous level: projected chord midpoints
            coarse = cur
            mq = len(Q)
            for i in range(len(coarse)):
                Q[(2 * i) % mq] = coarse[i]
                mid = 0.5 * (coarse[i] + coarse[(i + 1) % len(coarse)])
                st = project_point(pk, mid, tol.surface, 50)
                Q[(2 * i + 1) % mq] = mid
        cur = Q
        length = _polyline_length(cur)
        chunk = 250
        level_converged = False
        while sweeps < max_sweeps and not level_converged:
            n_sw = min(chunk, max_sweeps - sweeps)
            done, length, conv = shorten_sweeps(
                pk, cur, n_sw, tol_decrease, tol.surface
            )
            sweeps += int(done)
            level_converged = bool(conv)
            diameter = float(
                np.max(np.linalg.norm(cur - cur.mean(axis=0), axis=1))
            )
            if length < collapse_length or diameter < 0.02 * initial_diameter:
                raise CollapseToPoint(
                    f"curve shrank to length {length:.3g} after {sweeps} sweeps"
                )
        if final:
            converged = level_converged
    P = cur
    u0 = P[1] - P[0]
    _, g, _ = spec.value_grad_hess(P[0])
    u0 = u0 - (u0 @ g) / (g @ g) * g
    u0 /= np.linalg.norm(u0)
    return ShortenResult(
        polyline=P,
        length=length,
        sweeps=sweeps,
        converged=converged,
        seed=PhaseState(P[0], u0),
    )
