"""Named verification suites: each suite runs one acceptance block and
returns rows of (metric, value, threshold, pass).  The CLI prints them as
a table; the test suite asserts them.  Heavy shared objects (charts,
closed geodesics, annulus maps) are cached on the context."""

import time
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_INT, DEFAULT_TOL
from .errors import UnknownSuite
from . import annulus as AN
from . import flow as FL
from . import jets as J
from . import perturb as PT
from . import poincare as PL
from . import variational as V
from .fermi import build_chart
from .flow import PhaseState
from .surface import ellipsoid, sphere, certify_strict_convexity
from .perturb import BumpSpec, PerturbedSurface


@dataclass
class CheckRow:
    name: str
    value: float
    threshold: float
    op: str = "<="

    @property
    def passed(self):
        if self.op == "<=":
            return bool(self.value <= self.threshold)
        if self.op == ">=":
            return bool(self.value >= self.threshold)
        raise ValueError(self.op)

    def line(self):
        mark = "pass" if self.passed else "FAIL"
        return f"{self.name:<44s} {self.value:>12.4g} {self.op} {self.threshold:<10.3g} {mark}"


class SuiteContext:
    """Lazy shared fixtures for the verification suites."""

    def __init__(self, tol_scale=1.0, settings=DEFAULT_INT, seed=0):
        self.tol_scale = float(tol_scale)
        self.settings = settings
        self.seed = seed
        self._cache = {}
        # warm the kernels so reported runtimes exclude JIT compilation
        FL.flow_to_time(self.sphere, PhaseState([1.0, 0, 0], [0, 1.0, 0]), 0.1,
                        settings)

    def thr(self, value):
        return value * self.tol_scale

    def get(self, key, builder):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]

    @property
    def sphere(self):
        return self.get("sphere", lambda: sphere())

    @property
    def ellipsoid(self):
        return self.get("ellipsoid", lambda: ellipsoid([2.0, np.sqrt(2.0), 1.0]))

    @property
    def ellipsoid_D(self):
        return np.diag([1 / 4.0, 1 / 2.0, 1.0])

    @property
    def sphere_chart(self):
        return self.get(
            "sphere_chart",
            lambda: build_chart(
                self.sphere, PhaseState([1.0, 0, 0], [0.0, 1.0, 0.0]), np.pi
            ),
        )

    @property
    def sphere_fund(self):
        return self.get(
            "sphere_fund", lambda: V.jacobi_fundamental(self.sphere_chart, np.pi)
        )

    def closed(self, name):
        seeds = {
            "xy": PhaseState([2.0, 0, 0], [0, 1.0, 0]),
            "xz": PhaseState([2.0, 0, 0], [0, 0, 1.0]),
            "yz": PhaseState([0.0, np.sqrt(2.0), 0], [0, 0, 1.0]),
        }
        return self.get(
            f"closed_{name}",
            lambda: PL.find_closed_geodesic(self.ellipsoid, seeds[name],
                                            settings=self.settings),
        )

    @property
    def sphere_closed(self):
        return self.get(
            "sphere_closed",
            lambda: PL.find_closed_geodesic(
                self.sphere, PhaseState([1.0, 0, 0], [0, 1.0, 0]),
                settings=self.settings,
            ),
        )

    @property
    def perturbed_ellipsoid(self):
        return self.get(
            "perturbed_ellipsoid",
            lambda: PerturbedSurface(self.ellipsoid, ambient=[(0.05, "x1^2*x3^2")]),
        )

    def annulus_map(self, which):
        def build():
            spec = self.ellipsoid if which == "base" else self.perturbed_ellipsoid
            res = PL.find_closed_geodesic(
                spec, PhaseState([2.0, 0, 0], [0, 1.0, 0]), settings=self.settings
            )
            return AN.build_annulus_map(
                spec, res, normal=[0, 0, 1.0], settings=self.settings,
                convexity_budget=1500, seed=self.seed,
            )

        return self.get(f"annulus_{which}", build)

    def annulus_saddles(self, which):
        def build():
            amap = self.annulus_map(which)
            seeds = [
                np.array([p, np.pi / 2])
                for p in np.linspace(0.05, 2 * np.pi, 8, endpoint=False)
            ]
            fps = AN.annulus_fixed_points(amap, seeds, m=1)
            hyp = sorted(
                (f for f in fps if f.label == "hyperbolic"), key=lambda f: f.z[0]
            )
            ell = sorted(
                (f for f in fps if f.label == "elliptic"), key=lambda f: f.z[0]
            )
            return hyp, ell

        return self.get(f"saddles_{which}", build)

    def branches(self, which, budget):
        def build():
            amap = self.annulus_map(which)
            hyp, _ = self.annulus_saddles(which)
            bu = AN.grow_branches(amap, hyp[0], "unstable", max_arclength=budget)
            bs = AN.grow_branches(amap, hyp[1], "stable", max_arclength=budget)
            return bu, bs

        return self.get(f"branches_{which}", build)


# ----------------------------------------------------------------------

def suite_conservation(ctx):
    el = ctx.ellipsoid
    u0 = np.array([0.0, 0.6, 0.8])
    s0 = PhaseState([2.0, 0.0, 0.0], u0 / np.linalg.norm(u0))
    t_start = time.perf_counter()
    drift, traj = FL.joachimsthal_drift(el, ctx.ellipsoid_D, s0, 100.0,
                                        settings=ctx.settings)
    wall = time.perf_counter() - t_start
    speeds = np.linalg.norm(traj.velocities(), axis=1)
    energy_drift = float(np.max(np.abs(speeds**2 - speeds[0] ** 2))) / speeds[0] ** 2
    return [
        CheckRow("conservation.energy_drift[0,100]", energy_drift, ctx.thr(1e-8)),
        CheckRow("conservation.joachimsthal_drift", drift, ctx.thr(1e-6)),
        CheckRow("conservation.runtime_seconds", wall, 10.0),
    ]


def suite_sphere(ctx):
    res = ctx.sphere_closed
    rows = [
        CheckRow("sphere.closed_length_error",
                 abs(res.period - 2 * np.pi), ctx.thr(1e-6)),
        CheckRow("sphere.monodromy_eig_vs_1",
                 float(np.max(np.abs(res.eigenvalues - 1.0))), ctx.thr(1e-4)),
    ]
    amap = AN.build_annulus_map(ctx.sphere, res, normal=[0, 0, 1.0],
                                settings=ctx.settings, convexity_budget=500,
                                seed=ctx.seed)
    worst = 0.0
    for phi in (0.4, 2.4, 4.9):
        for y in (0.5, np.pi / 2, 2.3):
            z1, _ = amap.step(np.array([phi, y]))
            d = AN._wrap_delta(z1 - np.array([phi, y]))
            worst = max(worst, float(np.linalg.norm(d)))
    rows.append(CheckRow("sphere.annulus_identity", worst, ctx.thr(1e-6)))
    UL = ctx.sphere_fund.Us[-1]
    rows.append(
        CheckRow("sphere.jacobi_U(pi)_vs_-I",
                 float(np.max(np.abs(UL + np.eye(2)))), ctx.thr(1e-6))
    )
    return rows


def suite_symplectic(ctx):
    rows = []
    results = [ctx.sphere_closed, ctx.closed("xy"), ctx.closed("xz"),
               ctx.closed("yz")]
    symp = max(r.classification.symplectic_defect for r in results)
    pair = max(r.classification.pairing_defect for r in results)
    rows.append(CheckRow("symplectic.max_MT_Omega_M_defect", symp, ctx.thr(1e-5)))
    rows.append(CheckRow("symplectic.max_reciprocal_defect", pair, ctx.thr(1e-5)))
    return rows


def suite_classify(ctx):
    rows = []
    want = {"xy": "elliptic", "xz": "hyperbolic", "yz": "elliptic"}
    for name, expected in want.items():
        res = ctx.closed(name)
        rows.append(
            CheckRow(f"classify.{name}_is_{expected}",
                     1.0 if res.classification.label == expected else 0.0,
                     1.0, op=">=")
        )
    res = ctx.closed("xz")
    section = PL.SectionSpec.at(ctx.ellipsoid, res.state)
    M, _, _ = PL.return_map_jacobian(ctx.ellipsoid, section, np.zeros(2),
                                     settings=ctx.settings)
    Mfd = PL.return_map_jacobian_fd(ctx.ellipsoid, section, np.zeros(2),
                                    settings=ctx.settings)
    rows.append(
        CheckRow("classify.fd_oracle_agreement",
                 float(np.max(np.abs(M - Mfd))), ctx.thr(1e-4))
    )
    return rows


def suite_fermi(ctx):
    charts = [("sphere_equator", ctx.sphere_chart)]
    el = ctx.ellipsoid
    charts.append(
        ("ellipsoid_xy",
         ctx.get("chart_exy", lambda: build_chart(
             el, PhaseState([2.0, 0, 0], [0, 1.0, 0]), 4.0)))
    )
    u0 = np.array([0.0, 0.6, 0.8])
    charts.append(
        ("ellipsoid_tilted",
         ctx.get("chart_et", lambda: build_chart(
             el, PhaseState([2.0, 0, 0], u0 / np.linalg.norm(u0)), 3.0)))
    )
    rows = []
    for name, ch in charts:
        gmax = 0.0
        dgmax = 0.0
        for t in np.linspace(0.2, ch.length - 0.2, 3):
            g = ch.metric(t, np.zeros(ch.d))
            gmax = max(gmax, float(np.max(np.abs(g - np.eye(ch.d + 1)))))
            dgmax = max(dgmax, float(np.max(ch.metric_y_derivative_norms(t))))
        rows.append(CheckRow(f"fermi.{name}.|g-I|", gmax, ctx.thr(1e-6)))
        rows.append(CheckRow(f"fermi.{name}.|dg/dy|", dgmax, ctx.thr(1e-4)))
    return rows


def suite_variational(ctx):
    rows = []
    ch_s = ctx.sphere_chart
    U_s = ctx.sphere_fund.Us[-1]
    M_s = V.reduced_linearized_segment(ctx.sphere, ch_s, np.pi,
                                       settings=ctx.settings)
    rows.append(
        CheckRow("variational.sphere_two_routes",
                 float(np.max(np.abs(M_s - U_s)) / np.max(np.abs(U_s))),
                 ctx.thr(1e-4))
    )
    el = ctx.ellipsoid
    u0 = np.array([0.0, 0.6, 0.8])
    ch_e = ctx.get("chart_et", lambda: build_chart(
        el, PhaseState([2.0, 0, 0], u0 / np.linalg.norm(u0)), 3.0))
    fund = V.jacobi_fundamental(ch_e, 3.0)
    M_e = V.reduced_linearized_segment(el, ch_e, 3.0, settings=ctx.settings)
    rows.append(
        CheckRow("variational.ellipsoid_two_routes",
                 float(np.max(np.abs(M_e - fund.Us[-1])) / np.max(np.abs(fund.Us[-1]))),
                 ctx.thr(1e-4))
    )
    return rows


def suite_perturbation(ctx):
    rows = []
    el = ctx.ellipsoid
    s_off = PhaseState([2.05, 0.0, 0.02], [0.0, 1.0, 0.0])
    rep = PT.finite_difference_check(el, "x1*x3 + x2^2", s_off, 1e-4)
    ratio_dev = abs(rep["ratio"] - 2.0)
    rows.append(CheckRow("perturbation.richardson_ratio_dev", ratio_dev, 0.3))
    ch = ctx.get("chart_exy", lambda: build_chart(
        el, PhaseState([2.0, 0, 0], [0, 1.0, 0]), 4.0))
    # Fermi-form agreement: gbar quadratic form vs first-order Hamiltonian
    worst = 0.0
    psi = "x2^2*x3 + x1"
    for (t, yv) in ((1.0, 0.02), (2.5, -0.03)):
        gbar = PT.fermi_metric_perturbation(ch, psi, t, [yv])
        x, Jc = ch.point_and_diff(t, [yv])
        field = PT.as_field(psi, el)
        for v in (np.array([1.0, 0.2]), np.array([0.7, -0.5])):
            u = Jc @ v
            s = PhaseState(x, u)
            hbar = PT.first_order_hamiltonian(el, psi, s)
            quad = 0.5 * float(v @ gbar @ v)
            worst = max(worst, abs(hbar - quad) / max(abs(hbar), 1e-12))
    rows.append(CheckRow("perturbation.fermi_form_agreement", worst, ctx.thr(1e-5)))
    c00 = 0.0
    for t in np.linspace(0.3, 3.7, 5):
        Ct = ch.ctilde(t, np.zeros(1))
        c00 = max(c00, abs(float(Ct[0, 0]) - ch.kappa(t)))
    rows.append(CheckRow("perturbation.C00_equals_kappa", c00, ctx.thr(1e-6)))
    return rows


def suite_endpoint(ctx):
    rows = []
    ch = ctx.sphere_chart
    fund = ctx.sphere_fund
    errs = []
    for eps in (1e-3, 5e-4, 1e-4):
        rep = V.verify_endpoint_against_bump(
            ctx.sphere, ch, 1.2, [1.0], [0.0], eps, 1e-2,
            settings=ctx.settings, fund=fund)
        errs.append(rep["relative_error"])
    rows.append(CheckRow("endpoint.alpha_rel_error@1e-4", errs[-1], ctx.thr(5e-2)))
    mono = 1.0 if errs[0] > errs[1] > errs[2] else 0.0
    rows.append(CheckRow("endpoint.ladder_monotone", mono, 1.0, op=">="))
    rep_b = V.verify_endpoint_against_bump(
        ctx.sphere, ch, 1.2, [0.0], [1.0], 1e-5, 0.1,
        settings=ctx.settings, fund=fund)
    rows.append(CheckRow("endpoint.beta_rel_error", rep_b["relative_error"],
                         ctx.thr(5e-2)))
    return rows


def suite_jets(ctx):
    rows = []
    dims_ok = 1.0
    for d in (1, 2, 3):
        for k in range(1, 6):
            sp = J.PolySpace(d, k)
            if sp.dim != sp.dim_formula():
                dims_ok = 0.0
    rows.append(CheckRow("jets.dimension_formula", dims_ok, 1.0, op=">="))
    rng = np.random.default_rng(ctx.seed)
    for (d, k) in ((1, 1), (1, 2), (2, 2)):
        N = J.PolySpace(d, k).dim
        wins = 0
        for _ in range(100):
            sigmas = [J.random_symplectic(d, rng) for _ in range(N)]
            if J.k_general_test(sigmas, d, k).is_general:
                wins += 1
        rows.append(CheckRow(f"jets.k_general_rate_d{d}k{k}", wins, 99, op=">="))
    ok = 1.0
    for _ in range(100):
        N = 4
        us = rng.standard_normal((N, N))
        vs = rng.standard_normal((N, N))
        try:
            out = J.basis_persistence_scan(us, vs, 1.0, grid=257)
        except Exception:
            continue
        if out["roots"] > N:
            ok = 0.0
    rows.append(CheckRow("jets.persistence_root_bound", ok, 1.0, op=">="))
    # k = 1 jet effect against finite differences
    ch = ctx.sphere_chart
    eps = 1e-4
    bj = BumpSpec(chart=ch, t0=np.pi / 4, eps0=1e-2, poly=(((2,), 1.0),))
    pred = PT.jet_effect_first_order(ctx.sphere, ch, [(eps, bj)], 2.0,
                                     settings=ctx.settings)
    meas = PT.measure_jet_effect_k1(ctx.sphere, ch, [(eps, bj)], 2.0,
                                    settings=ctx.settings)
    A = pred["matrix_increment"]
    rel = float(np.linalg.norm(meas - A) / np.linalg.norm(A))
    rows.append(CheckRow("jets.k1_effect_vs_fd", rel, ctx.thr(5e-2)))
    return rows


def suite_rmap(ctx):
    rows = []
    ch = ctx.sphere_chart
    z = np.array([0.02, -0.01])
    z1 = PT.r_map(ctx.sphere, ch, 2.0, z, settings=ctx.settings)
    rows.append(
        CheckRow("rmap.identity_at_eps0", float(np.linalg.norm(z1 - z)),
                 ctx.thr(1e-8))
    )
    b = BumpSpec(chart=ch, t0=1.2, eps0=5e-2, poly=(((2,), 1.0),))
    dev = PT.geodesic_preservation_deviation(ctx.sphere, ch, [(1e-3, b)],
                                             settings=ctx.settings)
    rows.append(CheckRow("rmap.Pk_preserves_geodesic", dev, ctx.thr(1e-7)))
    return rows


def suite_annulus(ctx):
    rows = []
    amap = ctx.annulus_map("base")
    worst = 0.0
    for z0 in ([1.0, 1.1], [2.2, 0.7]):
        orb = amap.orbit(np.array(z0), 500)
        conf = AN.invariant_curve_confinement(amap, ctx.ellipsoid_D, orb[::5])
        worst = max(worst, conf)
    rows.append(CheckRow("annulus.orbit_confinement_500", worst, ctx.thr(1e-3)))
    hyp, ell = ctx.annulus_saddles("base")
    res_h = max((f.residual for f in hyp), default=np.inf)
    res_e = max((f.residual for f in ell), default=np.inf)
    # the same points are periodic points of P^2; report that residual
    res2 = np.inf
    if hyp and ell:
        res2 = 0.0
        for f in hyp + ell:
            p2, _ = amap.step(f.z, m=2)
            res2 = max(res2, float(np.linalg.norm(AN._wrap_delta(p2 - f.z))))
    rows.append(CheckRow("annulus.hyperbolic_point_residual", res_h, ctx.thr(1e-9)))
    rows.append(CheckRow("annulus.elliptic_point_residual", res_e, ctx.thr(1e-9)))
    rows.append(CheckRow("annulus.period2_residual", res2, ctx.thr(1e-9)))
    rows.append(CheckRow("annulus.n_hyperbolic", len(hyp), 2, op=">="))
    rows.append(CheckRow("annulus.n_elliptic", len(ell), 2, op=">="))
    return rows


def suite_tangle(ctx):
    rows = []
    t_start = time.perf_counter()
    bu, bs = ctx.branches("perturbed", 6.0)
    hits = AN.detect_crossing(bu, bs, exclude_radius=1e-2)
    above = [h for h in hits if h["transverse"]]
    best = max((h["angle"] for h in above), default=0.0)
    rows.append(CheckRow("tangle.crossings_above_floor", len(above), 1, op=">="))
    rows.append(CheckRow("tangle.max_angle", best, ctx.thr(1e-3), op=">="))
    bu0, bs0 = ctx.branches("base", 5.0)
    hits0 = AN.detect_crossing(bu0, bs0, exclude_radius=1e-2)
    above0 = [h for h in hits0 if h["transverse"]]
    rows.append(CheckRow("tangle.unperturbed_above_floor", len(above0), 0, op="<="))
    wall = time.perf_counter() - t_start
    rows.append(CheckRow("tangle.runtime_seconds", wall, 300.0))
    return rows


SUITES = {
    "conservation": suite_conservation,
    "sphere": suite_sphere,
    "symplectic": suite_symplectic,
    "classify": suite_classify,
    "fermi": suite_fermi,
    "variational": suite_variational,
    "perturbation": suite_perturbation,
    "endpoint": suite_endpoint,
    "jets": suite_jets,
    "rmap": suite_rmap,
    "annulus": suite_annulus,
    "tangle": suite_tangle,
}


def run_suite(name, ctx=None):
    if name == "all":
        ctx = ctx or SuiteContext()
        rows = []
        for key in SUITES:
            rows.extend(run_suite(key, ctx))
        return rows
    if name not in SUITES:
        raise UnknownSuite(
            f"unknown suite {name!r}; choose from {sorted(SUITES)} or 'all'"
        )
    ctx = ctx or SuiteContext()
    return SUITES[name](ctx)
