"""Symplectic k-jets, truncated polynomial composition, and k-generality.

Polynomials live over the 2d section variables z = (y_1..y_d, v_1..v_d) as
dicts mapping exponent tuples to coefficients.  A jet of order k is a
polynomial map R^{2d} -> R^{2d} fixing the origin with terms of total
degree 1..k whose linear part is symplectic.  The jet product follows
J f . J g = J (g o f).
"""

from dataclasses import dataclass
from itertools import combinations_with_replacement
from math import comb

import numpy as np
from scipy.linalg import expm

from .errors import (
    DegreeMismatch,
    DimensionMismatch,
    NotSymplectic,
    PreconditionBasisFails,
    WrongTupleLength,
)


def omega_matrix(d):
    O = np.zeros((2 * d, 2 * d))
    O[:d, d:] = np.eye(d)
    O[d:, :d] = -np.eye(d)
    return O


def monomials(nvars, degree):
    """Exponent tuples of total degree `degree` in combination order."""
    out = []
    for combo in combinations_with_replacement(range(nvars), degree):
        e = [0] * nvars
        for i in combo:
            e[i] += 1
        out.append(tuple(e))
    return out


@dataclass
class PolySpace:
    """Homogeneous polynomials of degree k in (y, v) with d fiber variables."""

    d: int
    k: int

    def __post_init__(self):
        self.nvars = 2 * self.d
        self.basis = monomials(self.nvars, self.k)
        self.index = {e: i for i, e in enumerate(self.basis)}

    @property
    def dim(self):
        return len(self.basis)

    def dim_formula(self):
        return comb(2 * self.d - 1 + self.k, self.k)

    def coeff_vector(self, poly):
        v = np.zeros(self.dim)
        for e, c in poly.items():
            if sum(e) != self.k:
                raise DegreeMismatch(f"monomial {e} is not degree {self.k}")
            v[self.index[e]] = c
        return v


# -- polynomial dict helpers -------------------------------------------------

def poly_mul(a, b, max_deg):
    out = {}
    for ea, ca in a.items():
        for eb, cb in b.items():
            e = tuple(x + y for x, y in zip(ea, eb))
            if sum(e) > max_deg:
                continue
            out[e] = out.get(e, 0.0) + ca * cb
    return {e: c for e, c in out.items() if c != 0.0}


def poly_add(a, b, scale=1.0):
    out = dict(a)
    for e, c in b.items():
        out[e] = out.get(e, 0.0) + scale * c
    return {e: c for e, c in out.items() if c != 0.0}


def poly_grad(a, nvars):
    grads = [dict() for _ in range(nvars)]
    for e, c in a.items():
        for i in range(nvars):
            if e[i] > 0:
                de = list(e)
                de[i] -= 1
                g = grads[i]
                te = tuple(de)
                g[te] = g.get(te, 0.0) + c * e[i]
    return grads


def poly_eval(a, z):
    tot = 0.0
    for e, c in a.items():
        term = c
        for i, p in enumerate(e):
            term *= z[i] ** p
        tot += term
    return tot


def poly_substitute(a, comps, max_deg, nvars):
    """Substitute z_i -> comps[i] (polynomial dicts), truncating."""
    out = {}
    one = {tuple([0] * nvars): 1.0}
    for e, c in a.items():
        term = dict(one)
        for i, p in enumerate(e):
            for _ in range(p):
                term = poly_mul(term, comps[i], max_deg)
                if not term:
                    break
        for te, tc in term.items():
            out[te] = out.get(te, 0.0) + c * tc
    return {e: c for e, c in out.items() if c != 0.0 and sum(e) <= max_deg}


def poly_compose_linear(a, sigma):
    """a(sigma z) for a linear map sigma, exact (degree preserved)."""
    nvars = sigma.shape[0]
    deg = max((sum(e) for e in a.keys()), default=0)
    comps = []
    for i in range(nvars):
        row = {}
        for j in range(nvars):
            if sigma[i, j] != 0.0:
                e = [0] * nvars
                e[j] = 1
                row[tuple(e)] = sigma[i, j]
        comps.append(row)
    return poly_substitute(a, comps, max(deg, 1), nvars)


# -- jets ---------------------------------------------------------------------

class JetMap:
    """Truncated polynomial map of R^{2d} fixing the origin (degrees 1..k)."""

    def __init__(self, d, k, comps, check_symplectic=True, tol=1e-10):
        self.d = d
        self.k = k
        self.nvars = 2 * d
        self.comps = [
            {e: c for e, c in comp.items() if 1 <= sum(e) <= k and c != 0.0}
            for comp in comps
        ]
        if check_symplectic:
            sig = self.linear_part()
            O = omega_matrix(d)
            defect = np.max(np.abs(sig.T @ O @ sig - O))
            if defect > max(tol, 1e-10):
                raise NotSymplectic(f"linear part defect {defect:.3e}")

    @classmethod
    def identity(cls, d, k):
        comps = []
        for i in range(2 * d):
            e = [0] * (2 * d)
            e[i] = 1
            comps.append({tuple(e): 1.0})
        return cls(d, k, comps, check_symplectic=False)

    @classmethod
    def from_linear(cls, sigma, k, check_symplectic=True):
        sigma = np.asarray(sigma, float)
        d = sigma.shape[0] // 2
        comps = []
        for i in range(2 * d):
            row = {}
            for j in range(2 * d):
                if sigma[i, j] != 0.0:
                    e = [0] * (2 * d)
                    e[j] = 1
                    row[tuple(e)] = sigma[i, j]
            comps.append(row)
        return cls(d, k, comps, check_symplectic=check_symplectic)

    def linear_part(self):
        sig = np.zeros((self.nvars, self.nvars))
        for i, comp in enumerate(self.comps):
            for e, c in comp.items():
                if sum(e) == 1:
                    sig[i, e.index(1)] = c
        return sig

    def degree_part(self, m):
        return [
            {e: c for e, c in comp.items() if sum(e) == m} for comp in self.comps
        ]

    def evaluate(self, z):
        return np.array([poly_eval(comp, z) for comp in self.comps])

    def coefficients_equal(self, other, tol=1e-12):
        if self.d != other.d or self.k != other.k:
            return False
        for a, b in zip(self.comps, other.comps):
            keys = set(a) | set(b)
            for e in keys:
                if abs(a.get(e, 0.0) - b.get(e, 0.0)) > tol:
                    return False
        return True

    def max_coeff_delta(self, other):
        out = 0.0
        for a, b in zip(self.comps, other.comps):
            for e in set(a) | set(b):
                out = max(out, abs(a.get(e, 0.0) - b.get(e, 0.0)))
        return out


def jet_compose(f, g):
    """Jet product: returns the jet of g o f truncated at the common order."""
    if f.d != g.d or f.k != g.k:
        raise DimensionMismatch("jets must share d and k")
    comps = [
        poly_substitute(comp, f.comps, f.k, f.nvars) for comp in g.comps
    ]
    return JetMap(f.d, f.k, comps, check_symplectic=False)


def jet_truncate(f, m):
    """Truncation projection pi_m; m = k returns an equal jet."""
    if m < 1:
        raise ValueError("truncation order must be >= 1")
    comps = [
        {e: c for e, c in comp.items() if sum(e) <= m} for comp in f.comps
    ]
    return JetMap(f.d, min(m, f.k), comps, check_symplectic=False)


def in_truncation_kernel(f, m, tol=1e-12):
    """True when pi_m(f) equals the m-jet of the identity."""
    return jet_truncate(f, m).coefficients_equal(JetMap.identity(f.d, m), tol)


def jet_invert(f):
    """Compositional inverse jet: f^{-1} o f = identity to order k.

    Solves g(z) = A^{-1} z - A^{-1} f_{>=2}(g(z)) by fixed-point iteration;
    each sweep fixes one more degree, so k-1 sweeps suffice.
    """
    A = f.linear_part()
    Ainv = np.linalg.inv(A)
    lin_comps = JetMap.from_linear(Ainv, f.k, check_symplectic=False).comps
    f_high = [
        {e: c for e, c in comp.items() if sum(e) >= 2} for comp in f.comps
    ]
    g_comps = [dict(c) for c in lin_comps]
    for _ in range(max(f.k - 1, 0)):
        fg_high = [
            poly_substitute(comp, g_comps, f.k, f.nvars) for comp in f_high
        ]
        new_comps = []
        for i in range(f.nvars):
            row = dict(lin_comps[i])
            for j in range(f.nvars):
                if Ainv[i, j] != 0.0 and fg_high[j]:
                    row = poly_add(row, fg_high[j], scale=-Ainv[i, j])
            new_comps.append(row)
        g_comps = new_comps
    return JetMap(f.d, f.k, g_comps, check_symplectic=False)


def random_symplectic(d, rng, scale=1.0):
    """exp(Omega S) with S symmetric: exactly symplectic up to rounding."""
    S = rng.standard_normal((2 * d, 2 * d))
    S = 0.5 * (S + S.T) * scale
    return expm(omega_matrix(d) @ S)


# -- k-generality -------------------------------------------------------------

def compose_y_poly_with_matrix(f_y, sigma, d):
    """f(sigma z) for f a polynomial in the y-variables only."""
    nvars = 2 * d
    lifted = {}
    for e, c in f_y.items():
        if len(e) == d:
            e = tuple(e) + (0,) * d
        lifted[tuple(e)] = c
    return poly_compose_linear(lifted, np.asarray(sigma, float))


def y_monomial_dictionary(d, k):
    """Candidate polynomials f in R_k[y]: y_1^k first, then all y-monomials."""
    first = [0] * (2 * d)
    first[0] = k
    cands = [{tuple(first): 1.0}]
    for e in monomials(d, k):
        full = tuple(e) + (0,) * d
        if full != tuple(first):
            cands.append({full: 1.0})
    return cands


@dataclass
class GeneralityResult:
    is_general: bool
    chosen: list
    condition_number: float
    rank: int
    dim: int


def k_general_test(sigmas, d, k, candidates=None, svd_tol=1e-8):
    """Decide whether (sigma_1..sigma_N) is k-general.

    Tries f_i = y_1^k for every slot first; if that fails, greedily picks
    candidates from the y-monomial dictionary to maximize rank.
    """
    space = PolySpace(d, k)
    N = space.dim
    if len(sigmas) != N:
        raise WrongTupleLength(f"need N = {N} matrices, got {len(sigmas)}")
    if candidates is None:
        candidates = y_monomial_dictionary(d, k)
    f_default = candidates[0]

    def matrix_for(choice):
        rows = []
        for f, sig in zip(choice, sigmas):
            rows.append(space.coeff_vector(compose_y_poly_with_matrix(f, sig, d)))
        return np.array(rows)

    choice = [f_default] * N
    A = matrix_for(choice)
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] > svd_tol * sv[0]:
        return GeneralityResult(True, choice, float(sv[0] / sv[-1]), N, N)
    # fallback greedy search
    rows = []
    choice = []
    for i, sig in enumerate(sigmas):
        best = None
        best_sv = -1.0
        for f in candidates:
            cand_rows = rows + [
                space.coeff_vector(compose_y_poly_with_matrix(f, sig, d))
            ]
            sv = np.linalg.svd(np.array(cand_rows), compute_uv=False)
            smin = sv[min(len(cand_rows), space.dim) - 1]
            if smin > best_sv:
                best_sv = smin
                best = f
        rows.append(space.coeff_vector(compose_y_poly_with_matrix(best, sig, d)))
        choice.append(best)
    A = np.array(rows)
    sv = np.linalg.svd(A, compute_uv=False)
    rank = int(np.sum(sv > svd_tol * sv[0]))
    ok = rank == N
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    return GeneralityResult(ok, choice, cond, rank, N)


def basis_persistence_scan(us, vs, eps_star, grid=512):
    """Count sign-change-bracketed roots of det[u_i + eps v_i] on [0, eps*].

    The determinant is a polynomial of degree <= N in eps, so at most N
    roots can exist; callers assert the returned count against N.
    """
    us = np.asarray(us, float)
    vs = np.asarray(vs, float)
    N = us.shape[0]
    if us.shape != vs.shape or us.shape[1] != N:
        raise DimensionMismatch("need N vectors of dimension N")
    A_star = us + eps_star * vs
    if abs(np.linalg.det(A_star.T)) == 0.0:
        raise PreconditionBasisFails("u_i + eps* v_i is not a basis")
    eps_grid = np.linspace(0.0, eps_star, grid)
    dets = np.array([np.linalg.det((us + e * vs).T) for e in eps_grid])
    signs = np.sign(dets)
    roots = 0
    for i in range(1, len(signs)):
        if signs[i - 1] == 0.0:
            roots += 1
        elif signs[i] != 0.0 and signs[i] != signs[i - 1]:
            roots += 1
    if signs[-1] == 0.0:
        roots += 1
    return {"roots": roots, "dets": dets, "eps": eps_grid, "N": N}


def hamiltonian_field_increment(f_y, sigma, d):
    """Polynomial map increment Omega grad(f o sigma) for f in R_{m+1}[y].

    This is the first-order jet increment contributed by one impulse bump
    whose transverse factor has (m+1)-jet f, transported by the linearized
    section map sigma.
    """
    nvars = 2 * d
    F = compose_y_poly_with_matrix(f_y, sigma, d)
    grads = poly_grad(F, nvars)
    O = omega_matrix(d)
    comps = []
    for i in range(nvars):
        row = {}
        for j in range(nvars):
            if O[i, j] != 0.0:
                row = poly_add(row, grads[j], scale=O[i, j])
        comps.append(row)
    return comps


def jet_span_rank(DPs, fs, m, svd_tol=1e-8):
    """Rank of the span of the increments Omega grad(f_n o DP_n) inside the
    space of degree-m homogeneous map increments."""
    if len(DPs) != len(fs):
        raise WrongTupleLength("need as many polynomials as section maps")
    d = np.asarray(DPs[0]).shape[0] // 2
    space = PolySpace(d, m)
    n_full = PolySpace(d, m + 1).dim
    vecs = []
    for sig, f in zip(DPs, fs):
        for e in f:
            deg = sum(e)
            if deg != m + 1:
                raise DegreeMismatch(f"f must be homogeneous of degree {m + 1}")
        comps = hamiltonian_field_increment(f, np.asarray(sig, float), d)
        v = np.concatenate([space.coeff_vector(c) if c else np.zeros(space.dim) for c in comps])
        vecs.append(v)
    A = np.array(vecs)
    if np.allclose(A, 0.0):
        return {"rank": 0, "dim": n_full, "singular_values": np.zeros(len(vecs))}
    sv = np.linalg.svd(A, compute_uv=False)
    rank = int(np.sum(sv > svd_tol * sv[0]))
    return {"rank": rank, "dim": n_full, "singular_values": sv}


def jet_to_dict(jet):
    """JSON-ready coefficient table."""
    return {
        "d": jet.d,
        "k": jet.k,
        "components": [
            [[list(e), c] for e, c in sorted(comp.items())] for comp in jet.comps
        ],
    }


def jet_from_dict(payload, check_symplectic=False):
    comps = [
        {tuple(e): float(c) for e, c in comp} for comp in payload["components"]
    ]
    return JetMap(payload["d"], payload["k"], comps,
                  check_symplectic=check_symplectic)


def save_jet_fixture(path, jets_and_tuples):
    """Jet and symplectic-tuple fixtures as JSON coefficient tables."""
    import json

    payload = {
        "jets": [jet_to_dict(j) for j in jets_and_tuples.get("jets", [])],
        "tuples": [
            [np.asarray(s, float).tolist() for s in tup]
            for tup in jets_and_tuples.get("tuples", [])
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
    return payload


def load_jet_fixture(path):
    import json

    with open(path) as fh:
        payload = json.load(fh)
    return {
        "jets": [jet_from_dict(p) for p in payload.get("jets", [])],
        "tuples": [
            [np.asarray(s, float) for s in tup]
            for tup in payload.get("tuples", [])
        ],
    }


def conjugation_preserves(pred, jet, sigma):
    """Check pred(sigma jet sigma^{-1}) == pred(jet) for one sample."""
    s = JetMap.from_linear(sigma, jet.k)
    s_inv = JetMap.from_linear(np.linalg.inv(sigma), jet.k)
    conj = jet_compose(jet_compose(s_inv, jet), s)
    return pred(conj) == pred(jet)
