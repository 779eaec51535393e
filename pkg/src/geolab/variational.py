"""Linearized flow, Jacobi fields in the parallel frame, and the
endpoint-response formula for mollified delta-bump forcings.

The Jacobi system along a unit-speed geodesic reads

    Udot = [[0, I], [-R(t), 0]] U,   U(0) = I_{2d},

with R_ik(t) = S_ik S_00 - S_i0 S_0k assembled from the frame components
of the shape operator (the ambient-hypersurface curvature identity; for
d = 1 this is the Gaussian curvature along the curve).  A forcing
f(t) = alpha delta(t - t0) + beta delta'(t - t0) displaces the endpoint by
U(L) U(t0)^{-1} (beta; alpha).
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .accel import jitted
from .config import DEFAULT_INT
from .errors import KappaVanishesOnSupport, SingularU
from . import integrate as it
from .flow import PhaseState, raise_for_status


def linearized_flow(spec, s0, t_end, settings=DEFAULT_INT, renorm=None):
    """Jacobian of the time-t flow map at s0 (2n x 2n), by integrating the
    variational equations with directional tape sweeps."""
    n = spec.n
    if renorm is None:
        renorm = settings.renorm
    V0 = np.eye(2 * n)
    y0 = np.concatenate([s0.x, s0.u, V0.reshape(-1)])
    yf, status, *_ = it.integrate_adaptive(
        spec.pack(), 2, y0, 0.0, float(t_end),
        settings.rtol, settings.atol, settings.h0,
        settings.max_steps, 1 if renorm else 0, settings.proj_tol, 0,
        settings.h_max,
    )
    raise_for_status(status, "(linearized flow)")
    J = np.empty((2 * n, 2 * n))
    for c in range(2 * n):
        off = 2 * n + c * 2 * n
        J[:, c] = yf[off : off + 2 * n]
    final = PhaseState(yf[:n], yf[n : 2 * n])
    return J, final


@jitted
def _jacobi_run(ts, R, dR, L, nsteps):
    """RK4 integration of the fundamental matrix with cubic Hermite
    interpolation of the curvature blocks.  Returns U at every step."""
    d = R.shape[1]
    m = ts.shape[0]
    dt_s = ts[1] - ts[0]
    h = L / nsteps
    U = np.eye(2 * d)
    out = np.empty((nsteps + 1, 2 * d, 2 * d))
    out[0] = U
    Rloc = np.empty((d, d))
    k1 = np.empty((2 * d, 2 * d))
    k2 = np.empty((2 * d, 2 * d))
    k3 = np.empty((2 * d, 2 * d))
    k4 = np.empty((2 * d, 2 * d))
    tmp = np.empty((2 * d, 2 * d))

    def interp_R(t, Rl):
        i = int(np.floor((t - ts[0]) / dt_s))
        if i < 0:
            i = 0
        if i > m - 2:
            i = m - 2
        th = (t - ts[i]) / dt_s
        h00 = 2 * th**3 - 3 * th**2 + 1
        h10 = (th**3 - 2 * th**2 + th) * dt_s
        h01 = -2 * th**3 + 3 * th**2
        h11 = (th**3 - th**2) * dt_s
        for a in range(d):
            for b in range(d):
                Rl[a, b] = (
                    h00 * R[i, a, b]
                    + h10 * dR[i, a, b]
                    + h01 * R[i + 1, a, b]
                    + h11 * dR[i + 1, a, b]
                )

    def apply_A(t, M, out_M):
        interp_R(t, Rloc)
        for a in range(d):
            for c in range(2 * d):
                out_M[a, c] = M[d + a, c]
                acc = 0.0
                for b in range(d):
                    acc -= Rloc[a, b] * M[b, c]
                out_M[d + a, c] = acc

    t = 0.0
    for s in range(nsteps):
        apply_A(t, U, k1)
        for a in range(2 * d):
            for b in range(2 * d):
                tmp[a, b] = U[a, b] + 0.5 * h * k1[a, b]
        apply_A(t + 0.5 * h, tmp, k2)
        for a in range(2 * d):
            for b in range(2 * d):
                tmp[a, b] = U[a, b] + 0.5 * h * k2[a, b]
        apply_A(t + 0.5 * h, tmp, k3)
        for a in range(2 * d):
            for b in range(2 * d):
                tmp[a, b] = U[a, b] + h * k3[a, b]
        apply_A(t + h, tmp, k4)
        for a in range(2 * d):
            for b in range(2 * d):
                U[a, b] += (
                    h / 6.0 * (k1[a, b] + 2.0 * k2[a, b] + 2.0 * k3[a, b] + k4[a, b])
                )
        out[s + 1] = U
        t += h
    return out


@dataclass
class FundamentalMatrix:
    """Fundamental solution U(t) of the Jacobi system on a dense grid."""

    ts: np.ndarray
    Us: np.ndarray        # (k, 2d, 2d)
    R_at: callable        # R(t) interpolant

    @property
    def d(self):
        return self.Us.shape[1] // 2

    def system_matrix(self, t):
        d = self.d
        A = np.zeros((2 * d, 2 * d))
        A[:d, d:] = np.eye(d)
        A[d:, :d] = -self.R_at(t)
        return A

    def U(self, t):
        """Cubic Hermite interpolation using Udot = A(t) U."""
        ts = self.ts
        i = int(np.searchsorted(ts, t) - 1)
        i = min(max(i, 0), len(ts) - 2)
        dt = ts[i + 1] - ts[i]
        th = (t - ts[i]) / dt
        U0, U1 = self.Us[i], self.Us[i + 1]
        dU0 = self.system_matrix(ts[i]) @ U0
        dU1 = self.system_matrix(ts[i + 1]) @ U1
        h00 = 2 * th**3 - 3 * th**2 + 1
        h10 = (th**3 - 2 * th**2 + th) * dt
        h01 = -2 * th**3 + 3 * th**2
        h11 = (th**3 - th**2) * dt
        return h00 * U0 + h10 * dU0 + h01 * U1 + h11 * dU1

    def inverse_derivative_residual(self, n_probe=25):
        """Residual of d/dt U^{-1} = -U^{-1} A(t), by centered differences."""
        res = 0.0
        ts = self.ts
        step = max(1, len(ts) // n_probe)
        for i in range(step, len(ts) - step, step):
            dt = ts[i + 1] - ts[i - 1]
            d_inv = (np.linalg.inv(self.Us[i + 1]) - np.linalg.inv(self.Us[i - 1])) / dt
            rhs = -np.linalg.inv(self.Us[i]) @ self.system_matrix(ts[i])
            res = max(res, float(np.max(np.abs(d_inv - rhs))))
        return res

    def max_det_defect(self):
        return float(
            max(abs(np.linalg.det(U) - 1.0) for U in self.Us[:: max(1, len(self.Us) // 50)])
        )

    def to_json(self, path):
        import json

        with open(path, "w") as fh:
            json.dump(
                {"ts": self.ts.tolist(), "U": [U.tolist() for U in self.Us]}, fh
            )


def jacobi_fundamental(chart, L, nsteps=None):
    """Fundamental matrix of the Jacobi system along the chart's geodesic."""
    d = chart.d
    m = len(chart.ts)
    R = np.empty((m, d, d))
    dR = np.empty((m, d, d))
    S = chart.Sab
    dS = chart.dSab
    for i in range(m):
        for a in range(d):
            for b in range(d):
                R[i, a, b] = S[i, a + 1, b + 1] * S[i, 0, 0] - S[i, a + 1, 0] * S[i, 0, b + 1]
                dR[i, a, b] = (
                    dS[i, a + 1, b + 1] * S[i, 0, 0]
                    + S[i, a + 1, b + 1] * dS[i, 0, 0]
                    - dS[i, a + 1, 0] * S[i, 0, b + 1]
                    - S[i, a + 1, 0] * dS[i, 0, b + 1]
                )
    if nsteps is None:
        nsteps = max(2000, int(L / 5e-4))
    Us = _jacobi_run(chart.ts, R, dR, float(L), nsteps)
    ts = np.linspace(0.0, float(L), nsteps + 1)

    def R_at(t):
        return chart.R_blocks(min(max(t, chart.ts[0]), chart.ts[-1]))

    return FundamentalMatrix(ts=ts, Us=Us, R_at=R_at)


def endpoint_response(fund, t0, alpha, beta):
    """First-order endpoint displacement (pos; vel) caused by the forcing
    alpha*delta(t - t0) + beta*delta'(t - t0): U(L) U(t0)^{-1} (beta; alpha)."""
    d = fund.d
    alpha = np.atleast_1d(np.asarray(alpha, float))
    beta = np.atleast_1d(np.asarray(beta, float))
    if np.all(alpha == 0.0) and np.all(beta == 0.0):
        return np.zeros(d), np.zeros(d)
    UL = fund.Us[-1]
    Ut0 = fund.U(t0)
    det = np.linalg.det(Ut0)
    if abs(det) < 1e-12:
        raise SingularU(f"det U(t0) = {det:.3e}")
    rhs = np.concatenate([beta, alpha])
    out = UL @ np.linalg.solve(Ut0, rhs)
    return out[:d], out[d:]


# ----------------------------------------------------------------------
# comparison of the Jacobi route with the reduced linearized flow
# ----------------------------------------------------------------------

def reduced_linearized_segment(spec, chart, L, settings=DEFAULT_INT):
    """2d x 2d linearization of the flow between the transverse sections at
    t = 0 and t = L, in the parallel-frame coordinates (y; v).

    This is the second, independent route to U(L): integrate the full
    ambient variational equations and reduce by projecting out the flow
    direction and reading frame components at both ends.
    """
    n = spec.n
    d = chart.d
    s0 = chart.state(0.0)
    E0 = chart.frame(0.0)
    v0, g0, H0 = spec.value_grad_hess(s0.x)
    gn2 = float(g0 @ g0)
    cols = []
    for j in range(d):  # position basis (e_j; constraint correction)
        dx = E0[j]
        du = -(float(H0 @ dx @ s0.u) / gn2) * g0
        cols.append(np.concatenate([dx, du]))
    for j in range(d):  # velocity basis (0; e_j)
        cols.append(np.concatenate([np.zeros(n), E0[j]]))
    V0 = np.array(cols)  # (2d, 2n)
    y0 = np.concatenate([s0.x, s0.u, V0.reshape(-1)])
    yf, status, *_ = it.integrate_adaptive(
        spec.pack(), 2, y0, 0.0, float(L),
        settings.rtol, settings.atol, settings.h0,
        settings.max_steps, 1, settings.proj_tol, 0, settings.h_max,
    )
    raise_for_status(status, "(reduced linearized segment)")
    xL = yf[:n]
    uL = yf[n : 2 * n]
    _, gL, HL = spec.value_grad_hess(xL)
    gnL = np.linalg.norm(gL)
    kapL = float(uL @ HL @ uL) / gnL
    udotL = -kapL * gL / gnL
    EL = chart.frame(L)
    w = chart.state(L).u  # section normal = flow direction at arrival
    M = np.empty((2 * d, 2 * d))
    for c in range(2 * d):
        off = 2 * n + c * 2 * n
        dx = yf[off : off + n].copy()
        du = yf[off + n : off + 2 * n].copy()
        dt_c = -float(dx @ w) / float(uL @ w)
        dx += dt_c * uL
        du += dt_c * udotL
        for i in range(d):
            M[i, c] = float(dx @ EL[i])
            M[d + i, c] = float(du @ EL[i])
    return M


# ----------------------------------------------------------------------
# mollified bump verification of the endpoint formula
# ----------------------------------------------------------------------

_MOLLIFIER_NORM = None


def mollifier_constant():
    """Normalization c with integral of c*exp(-1/(1-t^2)) over (-1,1) = 1."""
    global _MOLLIFIER_NORM
    if _MOLLIFIER_NORM is None:
        val, _ = quad(lambda t: np.exp(-1.0 / (1.0 - t * t)), -1.0, 1.0)
        _MOLLIFIER_NORM = 1.0 / val
    return _MOLLIFIER_NORM


def verify_endpoint_against_bump(
    spec, chart, t0, alpha, beta, eps, eps0, settings=DEFAULT_INT, fund=None
):
    """Measure the first-order endpoint displacement produced by the bump
    psi = C00^{-1} sum_j y_j f_j(y0) with mollified delta/delta' profiles,
    and compare with U(L) U(t0)^{-1} (beta; alpha).

    Returns a report dict with the measured and predicted (pos; vel)
    endpoint responses and their relative deviation.
    """
    from .perturb import BumpSpec, PerturbedSurface

    d = chart.d
    L = chart.length
    alpha = np.atleast_1d(np.asarray(alpha, float))
    beta = np.atleast_1d(np.asarray(beta, float))
    if not (eps0 < t0 < L - eps0):
        raise ValueError("bump support must lie inside (0, L)")
    # The bump that realizes the Jacobi forcing alpha*delta + beta*delta' is
    # psi = -kappa^{-1} sum_j y_j f_j: the first-order kick of the ambient
    # Hamiltonian is -kappa grad_y psi (verified in closed form on a shifted
    # sphere), so the weights carry a minus sign relative to the f_j.
    bump = BumpSpec(
        chart=chart, t0=t0, eps0=eps0, wphi=-alpha, wdphi=-beta, poly=(),
        kappa_inv=True,
    )
    pert = PerturbedSurface(spec, bumps=[(eps, bump)])
    s0 = chart.state(0.0)
    yb = np.concatenate([s0.x, s0.u])
    run = settings.capped(pert.suggested_h_max)
    yf, status, *_ = it.integrate_adaptive(
        pert.pack(), 0, yb, 0.0, L,
        run.rtol, run.atol, run.h0,
        run.max_steps, 1, run.proj_tol, 0, run.h_max,
    )
    raise_for_status(status, "(perturbed endpoint run)")
    base = chart.state(L)
    EL = chart.frame(L)
    n = spec.n
    if eps == 0.0:
        dpos = yf[:n] - base.x
        dvel = yf[n : 2 * n] - base.u
    else:
        dpos = (yf[:n] - base.x) / eps
        dvel = (yf[n : 2 * n] - base.u) / eps
    meas_pos = EL @ dpos
    meas_vel = EL @ dvel
    if fund is None:
        fund = jacobi_fundamental(chart, L)
    pred_pos, pred_vel = endpoint_response(fund, t0, alpha, beta)
    meas = np.concatenate([meas_pos, meas_vel])
    pred = np.concatenate([pred_pos, pred_vel])
    denom = max(np.linalg.norm(pred), 1e-300)
    return {
        "measured": meas,
        "predicted": pred,
        "relative_error": float(np.linalg.norm(meas - pred) / denom),
        "eps": eps,
        "eps0": eps0,
    }
