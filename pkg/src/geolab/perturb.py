"""Surface perturbations Q -> Q + eps psi and their first-order effects.

Two kinds of perturbation are supported:

* ambient expressions psi(x) folded into the instruction tape, and
* tube bumps psi = alpha(y0) beta(y) defined in the chart coordinates of a
  host FermiChart and realized in ambient space through the tube inverse,
  a radial cutoff, and a |grad Q| compensation factor (so the induced
  metric perturbation in chart coordinates is 2 psi Ctilde even when
  |grad Q| is not unit on M).

The module also measures section-to-section Poincare maps in tube
coordinates, the comparison map R = P_Q^{-1} o P_{Q+eps psi}, and the
first-order jet increments they acquire under bump families.
"""

from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_INT, DEFAULT_TOL
from .errors import (
    ChartInversionFailed,
    KappaVanishesOnSupport,
    NoReturnWithinTmax,
)
from . import expr as ex
from . import integrate as it
from . import jets
from .flow import PhaseState, hamiltonian, raise_for_status
from .kernels import (
    TUBE_INSIDE,
    bump_vg,
    bump_vgh,
    tube_coords,
    tube_jacobian,
)
from .surface import SurfaceSpec, project_to_surface
from .variational import mollifier_constant


@dataclass
class BumpSpec:
    """A localized perturbation alpha(y0) beta(y) on a host chart.

    alpha(y0) = wphi . y * phi_{eps0}(y0 - t0) + wdphi . y * phi'_{eps0}
    for the linear-in-y parts, plus phi_{eps0}(y0 - t0) * poly(y) for a
    homogeneous polynomial beta of degree k+1 (the perturbation space with
    vanishing k-jet at y = 0).  kappa_inv multiplies by 1/kappa(y0).
    """

    chart: object
    t0: float
    eps0: float
    wphi: np.ndarray = None
    wdphi: np.ndarray = None
    poly: tuple = ()
    kappa_inv: bool = True

    def __post_init__(self):
        d = self.chart.d
        self.wphi = np.zeros(d) if self.wphi is None else np.atleast_1d(
            np.asarray(self.wphi, float)
        )
        self.wdphi = np.zeros(d) if self.wdphi is None else np.atleast_1d(
            np.asarray(self.wdphi, float)
        )
        self.poly = tuple((tuple(e), float(c)) for e, c in self.poly)
        lo, hi = self.support
        ts = self.chart.ts
        if lo <= ts[0] or hi >= ts[-1]:
            raise ValueError(
                f"bump support ({lo:.3f}, {hi:.3f}) must lie inside the chart"
            )
        if self.kappa_inv:
            sel = (ts >= lo) & (ts <= hi)
            if np.min(np.abs(self.chart.kap[sel])) < 1e-3:
                raise KappaVanishesOnSupport(
                    "normal curvature falls below 1e-3 on the bump support"
                )
        degs = {sum(e) for e, _ in self.poly}
        if len(degs) > 1:
            raise ValueError("beta monomials must share one total degree")

    @property
    def support(self):
        return (self.t0 - self.eps0, self.t0 + self.eps0)

    @property
    def k(self):
        """Jet order: beta has vanishing k-jet (poly degree = k + 1)."""
        if self.poly:
            return sum(self.poly[0][0]) - 1
        return 0

    def in_perturbation_space(self, k):
        """Membership in the space of bumps with vanishing k-jet of beta."""
        if np.any(self.wphi != 0.0) or np.any(self.wdphi != 0.0):
            return k < 1
        return self.k >= k

    def row(self, amp):
        return {
            "amp": float(amp),
            "t0": self.t0,
            "eps0": self.eps0,
            "kappa_inv": self.kappa_inv,
            "wphi": self.wphi,
            "wdphi": self.wdphi,
            "poly": [(list(e), c) for e, c in self.poly],
        }

    def record(self, amp=1.0):
        r = self.row(amp)
        r["chart_id"] = self.chart.chart_id
        r["wphi"] = list(self.wphi)
        r["wdphi"] = list(self.wdphi)
        return r


class PerturbedSurface(SurfaceSpec):
    """Base surface plus ambient-expression and tube-bump perturbations."""

    def __init__(self, base, ambient=(), bumps=()):
        self.base = base
        self.ambient = [
            (float(e), ex.parse(p, base.n, base.params) if isinstance(p, str) else p)
            for e, p in ambient
        ]
        total = base.expr
        for eps, psi in self.ambient:
            total = total + ex.as_expr(eps) * psi
        super().__init__(
            total,
            base.n,
            normalized=base.normalized,
            bbox=base.bbox,
            name=base.name + "+perturbation",
        )
        self.bumps = [(float(e), b) for e, b in bumps]
        if self.bumps:
            charts = {id(b.chart) for _, b in self.bumps}
            if len(charts) > 1:
                raise ValueError("all tube bumps must share one host chart")
            chart = self.bumps[0][1].chart
            rows = [b.row(e) for e, b in self.bumps]
            pack = chart.tube_pack(rows, mol_c=mollifier_constant())
            self._pack = pack._replace(
                ops=self.tape.ops,
                a1=self.tape.a1,
                a2=self.tape.a2,
                cv=self.tape.consts,
            )

    @property
    def suggested_h_max(self):
        """Step cap so the integrator resolves mollifier supports."""
        if not self.bumps:
            return float("inf")
        return min(b.eps0 for _, b in self.bumps) / 4.0


class AmbientField:
    """psi given directly as an ambient expression with tape derivatives."""

    def __init__(self, source, n, params=None):
        spec = SurfaceSpec(source, n, params=params)
        self._spec = spec
        self.n = n

    def value_grad_hess(self, x):
        return self._spec.value_grad_hess(x)


class BumpField:
    """The realized ambient field of a BumpSpec (amplitude folded in)."""

    def __init__(self, bump, amp=1.0):
        self.bump = bump
        self.amp = float(amp)
        self._pack = bump.chart.tube_pack(
            [bump.row(self.amp)], mol_c=mollifier_constant()
        )
        self.n = bump.chart.spec.n

    def value_grad_hess(self, x, h_fd=1e-5):
        x = np.asarray(x, float)
        g = np.empty(self.n)
        H = np.empty((self.n, self.n))
        v = bump_vgh(self._pack, x, g, H, h_fd)
        if np.isnan(v):
            raise ChartInversionFailed(f"bump evaluation failed at {x}")
        return v, g, H

    def value(self, x):
        g = np.empty(self.n)
        v = bump_vg(self._pack, np.asarray(x, float), g)
        if np.isnan(v):
            raise ChartInversionFailed(f"bump evaluation failed at {x}")
        return v


def save_bump_library(path, bumps_with_amps):
    """Bump library file: JSON list of bump records keyed by chart id."""
    import json

    library = {}
    for amp, b in bumps_with_amps:
        library.setdefault(b.chart.chart_id, []).append(b.record(amp))
    with open(path, "w") as fh:
        json.dump(library, fh, indent=1)
    return library


def load_bump_library(path, charts):
    """Rebuild BumpSpecs from a library file; `charts` maps chart ids to
    FermiChart objects."""
    import json

    with open(path) as fh:
        library = json.load(fh)
    out = []
    for chart_id, rows in library.items():
        chart = charts[chart_id]
        for r in rows:
            out.append(
                (
                    r["amp"],
                    BumpSpec(
                        chart=chart,
                        t0=r["t0"],
                        eps0=r["eps0"],
                        wphi=r["wphi"],
                        wdphi=r["wdphi"],
                        poly=tuple((tuple(e), c) for e, c in r["poly"]),
                        kappa_inv=r["kappa_inv"],
                    ),
                )
            )
    return out


def as_field(psi, spec):
    if isinstance(psi, BumpSpec):
        return BumpField(psi)
    if isinstance(psi, (str, ex.Expr)):
        return AmbientField(psi, spec.n, params=spec.params)
    return psi


def perturbed(spec, psi, eps):
    if isinstance(psi, BumpSpec):
        return PerturbedSurface(spec, bumps=[(eps, psi)])
    return PerturbedSurface(spec, ambient=[(eps, psi)])


# ----------------------------------------------------------------------
# first-order Hamiltonian formulas
# ----------------------------------------------------------------------

def first_order_hamiltonian(spec, psi, s):
    """Hbar(x, u): first-order change of the Hamiltonian under Q -> Q+eps psi.

    Full formula including the off-surface terms weighted by Q/|grad Q|:
    Hbar = |grad Q|^{-1} [ kappa psi
          + (2 <n, grad psi> kappa + <Hess(psi) u, u>) Q/|grad Q| ].
    """
    fieldp = as_field(psi, spec)
    v, g, H = spec.value_grad_hess(s.x)
    gn = np.linalg.norm(g)
    kap = float(s.u @ H @ s.u) / gn
    pv, pg, pH = fieldp.value_grad_hess(s.x)
    nvec = -g / gn
    return (
        kap * pv
        + (2.0 * float(nvec @ pg) * kap + float(s.u @ pH @ s.u)) * v / gn
    ) / gn


def finite_difference_check(spec, psi, s, eps):
    """Richardson slope test of (H_{Q+eps psi} - H_Q)/eps against Hbar."""
    base_H = hamiltonian(spec, s)
    hbar = first_order_hamiltonian(spec, psi, s)

    def slope(e):
        return (hamiltonian(perturbed(spec, psi, e), s) - base_H) / e

    e1 = abs(slope(eps) - hbar)
    e2 = abs(slope(eps / 2) - hbar)
    ratio = e1 / e2 if e2 > 0 else np.inf
    return {
        "hbar": hbar,
        "slope": slope(eps),
        "err_eps": e1,
        "err_half": e2,
        "ratio": ratio,
        "eps": eps,
    }


def fermi_metric_perturbation(chart, psi, y0, y):
    """gbar(y0, y) = 2 (psi/|grad Q|) Ctilde through the exact chart
    differential; psi is the actual ambient field added to Q."""
    fieldp = as_field(psi, chart.spec)
    x, J = chart.point_and_diff(y0, np.atleast_1d(np.asarray(y, float)))
    v, g, H = chart.spec.value_grad_hess(x)
    gn = np.linalg.norm(g)
    Ct = J.T @ (H / gn) @ J
    if isinstance(fieldp, BumpField):
        pv = fieldp.value(x)
    else:
        pv = fieldp.value_grad_hess(x)[0]
    return 2.0 * (pv / gn) * Ct


# ----------------------------------------------------------------------
# section maps in tube coordinates
# ----------------------------------------------------------------------

def tube_lift(surface, chart, t, z, tol=DEFAULT_TOL):
    """Phase state on `surface` with tube coordinates (t, y) and
    projective velocity reading (1, v); z = (y, v) stacked."""
    d = chart.d
    z = np.asarray(z, float)
    y, v = z[:d], z[d:]
    pk = chart.tube_pack()
    n = chart.spec.n
    c = np.empty(n)
    c[0] = t
    c[1 : 1 + d] = y
    c[1 + d] = 0.0
    J = np.empty((n, n))
    # solve for the fiber offset z* with Q_surface(T(t, y, z*)) = 0
    from .kernels import chart_gamma, chart_frame, chart_normal

    p = np.empty(n)
    dp = np.empty(n)
    nv = np.empty(n)
    dnv = np.empty(n)
    e = np.empty(n)
    de = np.empty(n)
    chart_gamma(pk, float(t), p, dp)
    chart_normal(pk, float(t), nv, dnv)
    x = p.copy()
    for j in range(d):
        chart_frame(pk, float(t), j, e, de)
        x += y[j] * e
    zfib = 0.0
    for _ in range(40):
        qv, qg, _ = surface.value_grad_hess(x)
        if abs(qv) < 1e-13:
            break
        step = qv / float(qg @ nv)
        x -= step * nv
        zfib -= step
    c[1 + d] = zfib
    tube_jacobian(pk, c, J)
    qv, qg, _ = surface.value_grad_hess(x)
    cols = J[:, : 1 + d]
    w_raw = cols @ np.concatenate([[1.0], v])
    zeta = -float(qg @ w_raw) / float(qg @ J[:, 1 + d])
    u = w_raw + zeta * J[:, 1 + d]
    u /= np.linalg.norm(u)
    return PhaseState(x, u)


def tube_read(chart, s):
    """(y0, z) with z = (y, v): tube coordinates of a phase state, with the
    projective velocity v_j = (J^{-1}u)_j / (J^{-1}u)_0."""
    d = chart.d
    pk = chart.tube_pack()
    n = chart.spec.n
    c = np.empty(n)
    status = tube_coords(pk, s.x, c)
    if status != TUBE_INSIDE:
        raise ChartInversionFailed(f"state left the tube (status {status})")
    J = np.empty((n, n))
    tube_jacobian(pk, c, J)
    w = np.linalg.solve(J, s.u)
    v0 = w[0]
    return float(c[0]), np.concatenate([c[1 : 1 + d], w[1 : 1 + d] / v0])


def propagate_to_section(surface, chart, s, t_target, tdir, settings=DEFAULT_INT,
                         tmax=None):
    """Integrate until the trajectory crosses the section {y0 = t_target}
    (the affine plane through gamma(t) spanned by the frame and normal)."""
    base = chart.state(t_target)
    plane_p = base.x
    plane_w = base.u
    if tmax is None:
        tmax = DEFAULT_TOL.t_max_return
    h_max = settings.h_max
    if isinstance(surface, PerturbedSurface):
        h_max = min(h_max, surface.suggested_h_max)
    y0 = np.concatenate([s.x, s.u])
    yh, th, status, hits = it.integrate_events(
        surface.pack(), y0, 0.0, plane_p, plane_w, 1.0, 1, 1e-9, tmax,
        settings.rtol, settings.atol, settings.h0, 1, settings.proj_tol,
        float(tdir), h_max,
    )
    if status != it.OK:
        raise NoReturnWithinTmax(
            f"no section crossing at t={t_target} within {tmax} (status {status})"
        )
    n = chart.spec.n
    return PhaseState(yh[:n], yh[n : 2 * n]), th


def section_map(surface, chart, t_from, t_to, z, settings=DEFAULT_INT):
    """P_{surface}: section {y0=t_from} -> {y0=t_to} in tube coordinates."""
    s = tube_lift(surface, chart, t_from, z)
    tdir = 1.0 if t_to >= t_from else -1.0
    s1, _ = propagate_to_section(surface, chart, s, t_to, tdir, settings)
    _, z1 = tube_read(chart, s1)
    return z1


def r_map(pert, chart, t, z, settings=DEFAULT_INT):
    """R = P_{Q,t}^{-1} o P_{Q+eps psi, t} on the section {y0 = 0}."""
    base = pert.base if isinstance(pert, PerturbedSurface) else pert
    s = tube_lift(pert, chart, 0.0, z)
    s1, _ = propagate_to_section(pert, chart, s, t, 1.0, settings)
    x1 = project_to_surface(base, s1.x)
    _, g1, _ = base.value_grad_hess(x1)
    u1 = s1.u - (s1.u @ g1) / (g1 @ g1) * g1
    u1 /= np.linalg.norm(u1)
    s2, _ = propagate_to_section(base, chart, PhaseState(x1, u1), 0.0, -1.0, settings)
    _, z2 = tube_read(chart, s2)
    return z2


def section_map_jacobian(surface, chart, t_from, t_to, h=1e-3, settings=DEFAULT_INT):
    """Central-difference Jacobian of the section-to-section map at z = 0."""
    d = chart.d
    m = 2 * d
    J = np.empty((m, m))
    for j in range(m):
        zp = np.zeros(m)
        zp[j] = h
        fp = section_map(surface, chart, t_from, t_to, zp, settings)
        fm = section_map(surface, chart, t_from, t_to, -zp, settings)
        J[:, j] = (fp - fm) / (2 * h)
    return J


def r_map_jacobian(pert, chart, t, h=1e-3, settings=DEFAULT_INT):
    d = chart.d
    m = 2 * d
    J = np.empty((m, m))
    for j in range(m):
        zp = np.zeros(m)
        zp[j] = h
        fp = r_map(pert, chart, t, zp, settings)
        fm = r_map(pert, chart, t, -zp, settings)
        J[:, j] = (fp - fm) / (2 * h)
    return J


# ----------------------------------------------------------------------
# first-order jet effect of bump families
# ----------------------------------------------------------------------

def jet_effect_first_order(spec, chart, bumps, t_end, settings=DEFAULT_INT,
                           h=1e-3, dp_cache=None):
    """Predicted first-order increment of the k-jet of R.

    For each bump (eps_n, BumpSpec with beta of degree m+1) the increment
    of the m-jet is eps_n Omega grad(f_n o DP_{t_n}) with DP the linearized
    unperturbed section-to-section map.  For m = 1 the prediction is
    returned as the matrix sum Omega DP^T Hess(f) DP as well.
    """
    d = chart.d
    O = jets.omega_matrix(d)
    if dp_cache is None:
        dp_cache = {}
    comps_total = None
    mat_total = np.zeros((2 * d, 2 * d))
    order = None
    for eps_n, b in bumps:
        if not b.poly:
            raise ValueError("jet-effect bumps need a polynomial beta factor")
        m_ord = b.k
        order = m_ord if order is None else max(order, m_ord)
        key = round(float(b.t0), 12)
        if key not in dp_cache:
            dp_cache[key] = section_map_jacobian(
                spec, chart, 0.0, b.t0, h=h, settings=settings
            )
        DP = dp_cache[key]
        f_y = {tuple(e): c for e, c in b.poly}
        comps = jets.hamiltonian_field_increment(f_y, DP, d)
        comps = [
            {e: eps_n * c for e, c in comp.items()} for comp in comps
        ]
        if comps_total is None:
            comps_total = comps
        else:
            comps_total = [
                jets.poly_add(a, bb) for a, bb in zip(comps_total, comps)
            ]
    # matrix form of the prediction: degree-1 part of the increment
    if comps_total is not None and order == 1:
        for i in range(2 * d):
            for e, c in comps_total[i].items():
                if sum(e) == 1:
                    mat_total[i, e.index(1)] = c
    return {"poly_increment": comps_total, "matrix_increment": mat_total,
            "order": order, "dp_cache": dp_cache}


def measure_jet_effect_k1(spec, chart, bumps, t_end, h=1e-3, settings=DEFAULT_INT):
    """Finite-difference measurement of D R - I for a bump family, divided
    by nothing (amplitudes live in the bumps)."""
    pert = PerturbedSurface(spec, bumps=bumps)
    DR = r_map_jacobian(pert, chart, t_end, h=h, settings=settings)
    return DR - np.eye(2 * chart.d)


def geodesic_preservation_deviation(spec, chart, bumps, settings=DEFAULT_INT,
                                    n_probe=8):
    """Max deviation of the perturbed trajectory from the base geodesic."""
    pert = PerturbedSurface(spec, bumps=bumps)
    s0 = chart.state(0.0)
    dev = 0.0
    run = settings.capped(pert.suggested_h_max)
    for t in np.linspace(chart.length / n_probe, chart.length, n_probe):
        y0 = np.concatenate([s0.x, s0.u])
        yf, status, *_ = it.integrate_adaptive(
            pert.pack(), 0, y0, 0.0, float(t),
            run.rtol, run.atol, run.h0,
            run.max_steps, 1, run.proj_tol, 0, run.h_max,
        )
        raise_for_status(status, "(geodesic preservation)")
        base = chart.state(t)
        dev = max(dev, float(np.linalg.norm(yf[: spec.n] - base.x)))
    return dev
