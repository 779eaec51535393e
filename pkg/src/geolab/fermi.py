"""Fermi-style tube charts along a geodesic segment.

A chart carries dense samples of the base geodesic, parallel-transported
orthonormal frames e_1..e_d, the surface normal, and the normal curvature
along the segment.  The forward chart map is

    (y0, y) -> exp_{gamma(y0)}( sum_j y_j e_j(y0) )

realized by integrating the geodesic flow; its differential is obtained by
integrating the variational equations.  A cheap invertible tube model
T(y0, y, z) = gamma + sum y_j e_j + z n backs the fast Newton inversion
used by the perturbation kernels (it agrees with the chart to second order
in |y| and exactly on the curve).
"""

import hashlib
import json

import numpy as np

from .config import DEFAULT_INT, DEFAULT_TOL
from .errors import ChartInversionFailed, SelfIntersectingTube
from . import integrate as it
from .flow import PhaseState, raise_for_status
from .kernels import SurfPack, tube_coords, tube_far, TUBE_INSIDE
from .surface import evaluate_geometry, tangent_basis


class FermiChart:
    """Sampled tube chart along a unit-speed geodesic segment [0, length]."""

    def __init__(self, spec, ts, gam, dgam, ddgam, frames, dframes, nrm, dnrm,
                 kap, dkap, Sab, dSab, delta, cut_r, closed=False):
        self.spec = spec
        self.ts = ts
        self.gam = gam
        self.dgam = dgam
        self.ddgam = ddgam
        self.frames = frames
        self.dframes = dframes
        self.nrm = nrm
        self.dnrm = dnrm
        self.kap = kap
        self.dkap = dkap
        self.Sab = Sab
        self.dSab = dSab
        self.delta = float(delta)
        self.cut_r = float(cut_r)
        self.closed = bool(closed)
        h = hashlib.sha256()
        h.update(gam.tobytes())
        h.update(frames.tobytes())
        self.chart_id = h.hexdigest()[:16]

    @property
    def d(self):
        return self.frames.shape[1]

    @property
    def length(self):
        return float(self.ts[-1] - self.ts[0])

    @property
    def dt(self):
        return float(self.ts[1] - self.ts[0])

    # -- sampled data access -------------------------------------------------

    def state(self, t):
        """(gamma(t), gamma'(t)) by quintic Hermite interpolation."""
        pk = self.tube_pack()
        from .kernels import chart_gamma

        p = np.empty(self.spec.n)
        dp = np.empty(self.spec.n)
        chart_gamma(pk, float(t), p, dp)
        return PhaseState(p, dp)

    def frame(self, t):
        """Frame vectors e_j(t) as rows of a (d, n) array."""
        pk = self.tube_pack()
        from .kernels import chart_frame

        out = np.empty((self.d, self.spec.n))
        de = np.empty(self.spec.n)
        for j in range(self.d):
            chart_frame(pk, float(t), j, out[j], de)
        return out

    def kappa(self, t):
        pk = self.tube_pack()
        from .kernels import chart_kappa

        return chart_kappa(pk, float(t))[0]

    def R_blocks(self, t):
        """Jacobi curvature matrix R(t): R_ik = S_ik S_00 - S_i0 S_0k."""
        i, th = self._locate(t)
        S = self._interp_cubic(self.Sab, self.dSab, i, th)
        d = self.d
        R = np.empty((d, d))
        for a in range(d):
            for b in range(d):
                R[a, b] = S[a + 1, b + 1] * S[0, 0] - S[a + 1, 0] * S[0, b + 1]
        return R

    def _locate(self, t):
        dt = self.dt
        i = int(np.floor((t - self.ts[0]) / dt))
        i = min(max(i, 0), len(self.ts) - 2)
        return i, (t - self.ts[i]) / dt

    def _interp_cubic(self, vals, dvals, i, th):
        dt = self.dt
        h00 = 2 * th**3 - 3 * th**2 + 1
        h10 = (th**3 - 2 * th**2 + th) * dt
        h01 = -2 * th**3 + 3 * th**2
        h11 = (th**3 - th**2) * dt
        return h00 * vals[i] + h10 * dvals[i] + h01 * vals[i + 1] + h11 * dvals[i + 1]

    # -- kernel packing -------------------------------------------------------

    def tube_pack(self, bumps=None, mol_c=1.0):
        """SurfPack carrying this chart's sample arrays (and bump rows)."""
        base = self.spec.pack()
        d = self.d
        if bumps:
            nb = len(bumps)
            b_amp = np.array([b["amp"] for b in bumps])
            b_t0 = np.array([b["t0"] for b in bumps])
            b_eps0 = np.array([b["eps0"] for b in bumps])
            b_kflag = np.array([1.0 if b["kappa_inv"] else 0.0 for b in bumps])
            b_wphi = np.array([b["wphi"] for b in bumps]).reshape(nb, d)
            b_wdphi = np.array([b["wdphi"] for b in bumps]).reshape(nb, d)
            offs = [0]
            exps = []
            coefs = []
            for b in bumps:
                for e, c in b["poly"]:
                    exps.append(e)
                    coefs.append(c)
                offs.append(len(coefs))
            b_poff = np.array(offs, dtype=np.int64)
            b_pexp = (
                np.array(exps, dtype=np.int64).reshape(len(coefs), d)
                if coefs
                else np.empty((0, d), dtype=np.int64)
            )
            b_pcoef = np.array(coefs, dtype=np.float64)
        else:
            nb = 0
            b_amp = np.empty(0)
            b_t0 = np.empty(0)
            b_eps0 = np.empty(0)
            b_kflag = np.empty(0)
            b_wphi = np.empty((0, d))
            b_wdphi = np.empty((0, d))
            b_poff = np.zeros(1, dtype=np.int64)
            b_pexp = np.empty((0, d), dtype=np.int64)
            b_pcoef = np.empty(0)
        return SurfPack(
            ops=base.ops,
            a1=base.a1,
            a2=base.a2,
            cv=base.cv,
            n=self.spec.n,
            nbumps=nb,
            ts=self.ts,
            gam=self.gam,
            dgam=self.dgam,
            ddgam=self.ddgam,
            frames=self.frames,
            dframes=self.dframes,
            nrm=self.nrm,
            dnrm=self.dnrm,
            kap=self.kap,
            dkap=self.dkap,
            delta=self.delta,
            cut_r=self.cut_r,
            b_amp=b_amp,
            b_t0=b_t0,
            b_eps0=b_eps0,
            b_kflag=b_kflag,
            b_wphi=b_wphi,
            b_wdphi=b_wdphi,
            b_poff=b_poff,
            b_pexp=b_pexp,
            b_pcoef=b_pcoef,
            mol_c=mol_c,
        )

    # -- chart map ------------------------------------------------------------

    def point(self, y0, y, settings=DEFAULT_INT):
        """exp_{gamma(y0)}(sum_j y_j e_j(y0)) by geodesic integration."""
        y = np.atleast_1d(np.asarray(y, float))
        base = self.state(y0)
        E = self.frame(y0)
        w = y @ E
        wn = np.linalg.norm(w)
        if wn == 0.0:
            return base.x.copy()
        yv = np.concatenate([base.x, w / wn])
        yf, status, *_ = it.integrate_adaptive(
            self.spec.pack(), 0, yv, 0.0, wn,
            settings.rtol, settings.atol, min(settings.h0, wn / 4),
            settings.max_steps, 1, settings.proj_tol, 0, settings.h_max,
        )
        raise_for_status(status, "(chart point)")
        return yf[: self.spec.n]

    def point_and_diff(self, y0, y, settings=DEFAULT_INT):
        """Chart point and differential columns d(chart)/d(y0, y) (n x (d+1)).

        Variational route: the exponential map is differentiated by
        integrating the linearized flow with speed renormalization off.
        """
        y = np.atleast_1d(np.asarray(y, float))
        n = self.spec.n
        d = self.d
        base = self.state(y0)
        E = self.frame(y0)
        dE = self._frame_derivs(y0)
        w = y @ E
        state = np.concatenate([base.x, w])
        cols = np.zeros((d + 1, 2 * n))
        # d/dy0: base point and transported fiber both move
        cols[0, :n] = base.u
        cols[0, n:] = y @ dE
        for j in range(d):
            cols[1 + j, n:] = E[j]
        yv = np.concatenate([state, cols.reshape(-1)])
        yf, status, *_ = it.integrate_adaptive(
            self.spec.pack(), 2, yv, 0.0, 1.0,
            settings.rtol, settings.atol, settings.h0,
            settings.max_steps, 0, settings.proj_tol, 0, settings.h_max,
        )
        raise_for_status(status, "(chart differential)")
        x = yf[:n]
        J = np.empty((n, d + 1))
        for c in range(d + 1):
            off = 2 * n + c * 2 * n
            J[:, c] = yf[off : off + n]
        return x, J

    def _frame_derivs(self, t):
        pk = self.tube_pack()
        from .kernels import chart_frame

        out = np.empty((self.d, self.spec.n))
        e = np.empty(self.spec.n)
        for j in range(self.d):
            chart_frame(pk, float(t), j, e, out[j])
        return out

    def tube_coordinates(self, x):
        """Fast Newton inversion of the tube model.  Returns (y0, y, z)."""
        pk = self.tube_pack()
        c = np.empty(self.spec.n)
        status = tube_coords(pk, np.asarray(x, float), c)
        if status != TUBE_INSIDE:
            raise ChartInversionFailed(f"tube inversion status {status} at {x}")
        return float(c[0]), c[1 : 1 + self.d].copy(), float(c[1 + self.d])

    def invert(self, x, settings=DEFAULT_INT, max_iter=30, tol=1e-11):
        """Exact chart inversion: Newton on the integrated chart map."""
        x = np.asarray(x, float)
        y0, y, _ = self.tube_coordinates(x)
        c = np.concatenate([[y0], y])
        for _ in range(max_iter):
            p, J = self.point_and_diff(c[0], c[1:], settings)
            r = p - x
            if np.linalg.norm(r) <= tol:
                return float(c[0]), c[1:].copy()
            step, *_ = np.linalg.lstsq(J, r, rcond=None)
            c = c - step
        raise ChartInversionFailed(f"no convergence inverting chart at {x}")

    # -- metric ---------------------------------------------------------------

    def metric(self, y0, y, route="variational", fd_step=1e-5):
        """Pullback metric g_ij(y0, y) through the chart differential."""
        if route == "variational":
            _, J = self.point_and_diff(y0, y)
            return J.T @ J
        if route == "fd":
            y = np.atleast_1d(np.asarray(y, float))
            c0 = np.concatenate([[y0], y])
            cols = []
            for k in range(1 + self.d):
                cp = c0.copy()
                cp[k] += fd_step
                cm = c0.copy()
                cm[k] -= fd_step
                xp = self.point(cp[0], cp[1:])
                xm = self.point(cm[0], cm[1:])
                cols.append((xp - xm) / (2 * fd_step))
            J = np.array(cols).T
            return J.T @ J
        raise ValueError(f"unknown route {route!r}")

    def metric_y_derivative_norms(self, y0, step=1e-3):
        """max |d g_ij/d y_k| at (y0, 0) by central differences."""
        out = []
        for k in range(self.d):
            y = np.zeros(self.d)
            y[k] = step
            gp = self.metric(y0, y)
            gm = self.metric(y0, -y)
            out.append(np.max(np.abs(gp - gm)) / (2 * step))
        return np.array(out)

    def ctilde(self, y0, y):
        """Curvature form in chart coordinates:
        Ctilde_ij = <C(x) dx/dy_i, dx/dy_j>  (tangential contraction of the
        on-surface normalized Hessian)."""
        x, J = self.point_and_diff(y0, y)
        geom = evaluate_geometry(self.spec, x, tol=DEFAULT_TOL)
        return J.T @ geom.C @ J

    def geodesic_residuals(self, n_probe=13):
        """Residuals of gamma(t) = (t, 0), gamma' = (1, 0) in chart coords."""
        res_pt = 0.0
        res_inv = 0.0
        pk = self.tube_pack()
        probes = np.linspace(self.ts[0], self.ts[-1], n_probe)[1:-1]
        for t in probes:
            x = self.point(t, np.zeros(self.d))
            res_pt = max(res_pt, float(np.linalg.norm(x - self.state(t).x)))
            c = np.empty(self.spec.n)
            st = tube_coords(pk, self.state(t).x, c)
            if st != TUBE_INSIDE:
                raise ChartInversionFailed(f"base curve left the tube at t={t}")
            res_inv = max(
                res_inv,
                abs(c[0] - t) + float(np.linalg.norm(c[1 : 1 + self.d])),
            )
        return {"point_residual": res_pt, "inverse_residual": res_inv}

    def frame_residuals(self):
        """Orthonormality and parallel-transport residuals over the samples."""
        m = len(self.ts)
        orth = 0.0
        par = 0.0
        for i in range(1, m - 1):
            E = self.frames[i]
            G = E @ E.T
            orth = max(orth, float(np.max(np.abs(G - np.eye(self.d)))))
            orth = max(orth, float(np.max(np.abs(E @ self.dgam[i]))))
            de_fd = (self.frames[i + 1] - self.frames[i - 1]) / (2 * self.dt)
            nv = self.nrm[i]
            tang = de_fd - np.outer(de_fd @ nv, nv)
            par = max(par, float(np.max(np.abs(tang))))
        return {"orthonormality": orth, "parallel_residual": par}

    def to_json(self, path):
        payload = {
            "chart_id": self.chart_id,
            "delta": self.delta,
            "cut_r": self.cut_r,
            "ts": self.ts.tolist(),
            "gamma": self.gam.tolist(),
            "gamma_dot": self.dgam.tolist(),
            "frames": self.frames.tolist(),
            "kappa": self.kap.tolist(),
            "surface": self.spec.describe(),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)


def build_chart(
    spec,
    s0,
    length,
    delta=None,
    dt=0.005,
    closed=False,
    settings=DEFAULT_INT,
    tol=DEFAULT_TOL,
    min_separation=0.5,
):
    """Construct a FermiChart along the geodesic from s0 over [0, length].

    The base geodesic and the parallel-transport ODE for the frame are
    integrated jointly on a fixed fine grid.  Raises SelfIntersectingTube
    when two samples separated in time (circularly, for closed=True) come
    closer than 2*delta.
    """
    n = spec.n
    d = spec.d
    u0 = np.asarray(s0.u, float)
    sp = np.linalg.norm(u0)
    if abs(sp - 1.0) > 1e-8:
        u0 = u0 / sp
    geom0 = evaluate_geometry(spec, s0.x, tol=tol)
    E0 = tangent_basis(geom0.normal, against=u0)
    if E0.shape[0] != d:
        raise ChartInversionFailed("could not build an initial tangent frame")
    nsteps = int(np.ceil(length / dt))
    dt = length / nsteps
    y0 = np.concatenate([np.asarray(s0.x, float), u0, E0.reshape(-1)])
    ys, status = it.integrate_grid(
        spec.pack(), 1, y0, 0.0, dt, nsteps, 1, settings.proj_tol
    )
    raise_for_status(status, "(chart construction)")
    m = nsteps + 1
    ts = np.linspace(0.0, length, m)
    gam = ys[:, :n].copy()
    dgam = ys[:, n : 2 * n].copy()
    frames = ys[:, 2 * n :].reshape(m, d, n).copy()
    ddgam = np.empty((m, n))
    nrm = np.empty((m, n))
    dnrm = np.empty((m, n))
    kap = np.empty(m)
    dframes = np.empty((m, d, n))
    Sab = np.empty((m, d + 1, d + 1))
    for i in range(m):
        geom = evaluate_geometry(spec, gam[i], tol=tol)
        nv = geom.normal
        nrm[i] = nv
        C = geom.C
        ta = np.vstack([dgam[i], frames[i]])
        Sab[i] = ta @ C @ ta.T
        kap[i] = Sab[i, 0, 0]
        ddgam[i] = kap[i] * nv
        Cg = C @ dgam[i]
        dnrm[i] = -(Cg - (Cg @ nv) * nv)
        for j in range(d):
            dframes[i, j] = (C @ dgam[i] @ frames[i, j]) * nv
    dkap = _central_diff(kap, dt)
    dSab = _central_diff(Sab, dt)
    if delta is None:
        smax = max(np.max(np.abs(np.linalg.eigvalsh(S))) for S in Sab)
        delta = 0.1 / smax
    # self-intersection screen on the sample cloud
    sep = max(min_separation, 4 * dt)
    for i in range(m):
        tdist = ts[i + 1 :] - ts[i]
        if closed:
            tdist = np.minimum(tdist, length - tdist)
        mask = tdist >= sep
        if not mask.any():
            continue
        dd = np.linalg.norm(gam[i + 1 :][mask] - gam[i], axis=1)
        if (dd < 2 * delta).any():
            j = int(np.argmax(dd < 2 * delta))
            raise SelfIntersectingTube(
                f"tube of radius {delta:.3g} self-intersects near t={ts[i]:.3f}"
            )
    return FermiChart(
        spec, ts, gam, dgam, ddgam, frames, dframes, nrm, dnrm, kap, dkap,
        Sab, dSab, delta=delta, cut_r=delta, closed=closed,
    )


def _central_diff(vals, dt):
    out = np.empty_like(vals)
    out[1:-1] = (vals[2:] - vals[:-2]) / (2 * dt)
    out[0] = (vals[1] - vals[0]) / dt
    out[-1] = (vals[-1] - vals[-2]) / dt
    return out


def hv_split(spec, s, dx, du, tol=DEFAULT_TOL):
    """Split a phase-space variation into (horizontal; vertical) parts.

    The vertical part is the covariant derivative of the position
    variation along the orbit, computed by the ambient projection
    nabla_t w = wdot - <wdot, n> n.
    """
    geom = evaluate_geometry(spec, s.x, tol=tol)
    du = np.asarray(du, float)
    vert = du - (du @ geom.normal) * geom.normal
    return np.asarray(dx, float).copy(), vert
