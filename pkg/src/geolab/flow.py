"""The geodesic flow as an ambient ODE with conservation contracts.

xdot = u, udot = kappa(x, u) n(x).  The Hamiltonian
H = u^2/2 + kappa(x,u) Q(x)/|grad Q(x)| generates this field through the
standard symplectic matrix; on TM the second term vanishes and the energy
u^2/2 is conserved.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_INT, DEFAULT_TOL
from .errors import (
    NotTangent,
    OffSurface,
    ProjectionDiverged,
    SingularGradient,
    StepSizeUnderflow,
)
from . import integrate as it
from .kernels import tape_dir_from_regs, tape_vgh_regs


@dataclass
class PhaseState:
    """Ambient point-velocity pair constrained to Q(x)=0, <grad Q, u>=0."""

    x: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, float)
        self.u = np.asarray(self.u, float)

    def validate(self, spec, tol=DEFAULT_TOL):
        v, g, _ = spec.value_grad_hess(self.x)
        gn = np.linalg.norm(g)
        if gn <= tol.gradient:
            raise SingularGradient(f"|grad Q| = {gn:.3e}")
        if abs(v) > tol.surface:
            raise OffSurface(f"|Q| = {abs(v):.3e}")
        un = np.linalg.norm(self.u)
        if abs(g @ self.u) > tol.tangent * max(un * gn, 1e-300):
            raise NotTangent(f"<grad Q, u> = {g @ self.u:.3e}")
        return self

    def speed(self):
        return float(np.linalg.norm(self.u))

    def packed(self):
        return np.concatenate([self.x, self.u])


def state_from_vector(y, n):
    return PhaseState(y[:n].copy(), y[n : 2 * n].copy())


def vector_field(spec, s):
    """X(x,u) = (u, kappa(x,u) n(x))."""
    v, g, H = spec.value_grad_hess(s.x)
    gn = np.linalg.norm(g)
    if gn <= DEFAULT_TOL.gradient:
        raise SingularGradient(f"|grad Q| = {gn:.3e}")
    kappa = float(s.u @ H @ s.u) / gn
    return s.u.copy(), -kappa * g / gn


def hamiltonian(spec, s):
    """H(x,u) = u^2/2 + kappa(x,u) Q(x)/|grad Q(x)| (nonzero off-surface)."""
    v, g, H = spec.value_grad_hess(s.x)
    gn = np.linalg.norm(g)
    if gn <= DEFAULT_TOL.gradient:
        raise SingularGradient(f"|grad Q| = {gn:.3e}")
    kappa = float(s.u @ H @ s.u) / gn
    return float(s.u @ s.u) / 2.0 + kappa * v / gn


def hamiltonian_gradient(spec, s):
    """Exact phase-space gradient of H via directional tape sweeps."""
    n = spec.n
    pk = spec.pack()
    x, u = s.x, s.u
    m = len(pk.ops)
    vals = np.empty(m)
    grads = np.empty((m, n))
    hess = np.empty((m, n, n))
    v = tape_vgh_regs(pk.ops, pk.a1, pk.a2, pk.cv, x, vals, grads, hess)
    g = grads[m - 1].copy()
    H = hess[m - 1].copy()
    gn = np.linalg.norm(g)
    kappa = float(u @ H @ u) / gn
    dH_du = u + 2.0 * (H @ u) * v / gn**2
    dH_dx = np.empty(n)
    tg = np.empty(n)
    tH = np.empty((n, n))
    for k in range(n):
        dx = np.zeros(n)
        dx[k] = 1.0
        tape_dir_from_regs(pk.ops, pk.a1, pk.a2, pk.cv, x, dx, vals, grads, hess, tg, tH)
        dgn = float(g @ tg) / gn
        dkappa = float(u @ tH @ u) / gn - kappa * dgn / gn
        dH_dx[k] = dkappa * v / gn + kappa * (g[k] / gn - v * dgn / gn**2)
    return np.concatenate([dH_dx, dH_du])


def symplectic_gradient_defect(spec, s):
    """Relative defect of X = Omega grad H at the state s."""
    n = spec.n
    gradH = hamiltonian_gradient(spec, s)
    omega_grad = np.concatenate([gradH[n:], -gradH[:n]])
    xdot, udot = vector_field(spec, s)
    X = np.concatenate([xdot, udot])
    return float(np.linalg.norm(X - omega_grad) / max(np.linalg.norm(X), 1e-300))


@dataclass
class Trajectory:
    ts: np.ndarray
    ys: np.ndarray
    n: int
    stats: dict = field(default_factory=dict)

    def state(self, i):
        return state_from_vector(self.ys[i], self.n)

    @property
    def final(self):
        return self.state(len(self.ts) - 1)

    def positions(self):
        return self.ys[:, : self.n]

    def velocities(self):
        return self.ys[:, self.n : 2 * self.n]

    def max_speed_drift(self):
        speeds = np.linalg.norm(self.velocities(), axis=1)
        return float(np.max(np.abs(speeds - speeds[0])))

    def to_csv(self, path, spec=None):
        n = self.n
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = (
                ["t"]
                + [f"x{i}" for i in range(1, n + 1)]
                + [f"u{i}" for i in range(1, n + 1)]
                + ["H"]
            )
            w.writerow(header)
            for i, t in enumerate(self.ts):
                row = [repr(float(t))]
                row += [repr(float(v)) for v in self.ys[i, : 2 * n]]
                if spec is not None:
                    h = hamiltonian(spec, self.state(i))
                else:
                    h = 0.5 * float(self.ys[i, n : 2 * n] @ self.ys[i, n : 2 * n])
                row.append(repr(float(h)))
                w.writerow(row)


_STATUS_ERRORS = {
    it.UNDERFLOW: (StepSizeUnderflow, "step size underflow"),
    it.PROJ_FAIL: (ProjectionDiverged, "post-step projection diverged"),
    it.MAXSTEPS: (StepSizeUnderflow, "max step count exceeded"),
}


def raise_for_status(status, context=""):
    if status == it.OK:
        return
    exc, msg = _STATUS_ERRORS.get(status, (StepSizeUnderflow, f"status {status}"))
    raise exc(f"{msg} {context}".strip())


def integrate(spec, s0, t_end, settings=DEFAULT_INT, store=True):
    """Integrate the geodesic flow for time t_end (may be negative)."""
    y0 = s0.packed()
    y, status, nacc, nrej, drift, ts, ys = it.integrate_adaptive(
        spec.pack(),
        0,
        y0,
        0.0,
        float(t_end),
        settings.rtol,
        settings.atol,
        settings.h0,
        settings.max_steps,
        1 if settings.renorm else 0,
        settings.proj_tol,
        1 if store else 0,
        settings.h_max,
    )
    raise_for_status(status, f"(t_end={t_end})")
    stats = {
        "steps": int(nacc),
        "rejected": int(nrej),
        "max_speed_drift": float(drift),
    }
    if not store or len(ts) == 0:
        ts = np.array([0.0, float(t_end)]) if t_end != 0 else np.array([0.0])
        ys = np.vstack([y0, y]) if t_end != 0 else y0[None, :]
    return Trajectory(ts=ts, ys=ys, n=spec.n, stats=stats)


def flow_to_time(spec, s0, t_end, settings=DEFAULT_INT):
    """Final state only."""
    traj = integrate(spec, s0, t_end, settings=settings, store=False)
    return traj.final


def check_energy_homogeneity(spec, s0, c, t_end, n_probes=8, settings=DEFAULT_INT):
    """Deviation between phi^{t}(x, u) and phi^{t/c}(x, c u) positions."""
    probes = np.linspace(t_end / n_probes, t_end, n_probes)
    dev = 0.0
    for t in probes:
        a = flow_to_time(spec, s0, t, settings)
        b = flow_to_time(spec, PhaseState(s0.x, c * s0.u), t / c, settings)
        dev = max(dev, float(np.linalg.norm(a.x - b.x)))
    return {"max_position_deviation": dev, "c": c, "t_end": t_end}


def time_reversibility_defect(spec, s0, t_end, settings=DEFAULT_INT):
    """|phi^{-t} phi^{t} s0 - s0| in the packed phase-space norm."""
    mid = flow_to_time(spec, s0, t_end, settings)
    back = flow_to_time(spec, PhaseState(mid.x, -mid.u), t_end, settings)
    return float(
        np.linalg.norm(back.x - s0.x) + np.linalg.norm(back.u + s0.u)
    )


def joachimsthal(D, s):
    """|D x|^2 <D u, u> : first integral of the flow on {x^T D x = 1}/2."""
    Dx = D @ s.x
    return float((Dx @ Dx) * (s.u @ (D @ s.u)))


def joachimsthal_drift(spec, D, s0, t_end, settings=DEFAULT_INT):
    traj = integrate(spec, s0, t_end, settings=settings)
    vals = np.array(
        [joachimsthal(D, traj.state(i)) for i in range(len(traj.ts))]
    )
    return float(np.max(np.abs(vals - vals[0])) / max(abs(vals[0]), 1e-300)), traj
