"""Hot numeric kernels.

Everything here is numba-compilable (pure-numpy fallback via
:mod:`geolab.accel`).  The kernels operate on a :data:`SurfPack` namedtuple
of flat arrays describing

* the instruction tape of the level-set function Q (exact forward-mode
  value / gradient / Hessian, plus a directional sweep that also yields
  third-derivative contractions), and
* optional tube bumps: localized perturbations defined in Fermi-style tube
  coordinates along a base geodesic, realized in ambient space through a
  Newton inversion of the tube map.
"""

from collections import namedtuple

import numpy as np

from .accel import jitted
from .expr import (
    OP_ADD,
    OP_CONST,
    OP_COS,
    OP_DIV,
    OP_EXP,
    OP_LOG,
    OP_MUL,
    OP_NEG,
    OP_POWI,
    OP_SIN,
    OP_SQRT,
    OP_SUB,
    OP_TANH,
    OP_VAR,
)

SurfPack = namedtuple(
    "SurfPack",
    [
        "ops",      # (m,) int64 tape opcodes
        "a1",       # (m,) int64
        "a2",       # (m,) int64
        "cv",       # (m,) float64
        "n",        # ambient dimension
        "nbumps",   # number of tube bumps
        # chart sample arrays (empty when nbumps == 0); uniform t grid
        "ts",       # (ms,)
        "gam",      # (ms, n)
        "dgam",     # (ms, n)
        "ddgam",    # (ms, n)
        "frames",   # (ms, d, n)
        "dframes",  # (ms, d, n)
        "nrm",      # (ms, n)
        "dnrm",     # (ms, n)
        "kap",      # (ms,)
        "dkap",     # (ms,)
        "delta",    # tube radius
        "cut_r",    # cutoff radius in |y|
        # per-bump parameters
        "b_amp",    # (nb,)
        "b_t0",     # (nb,)
        "b_eps0",   # (nb,)
        "b_kflag",  # (nb,) 1.0 -> multiply by kappa(y0)^(-1)
        "b_wphi",   # (nb, d) linear-in-y weights on the mollifier
        "b_wdphi",  # (nb, d) linear-in-y weights on the mollifier derivative
        "b_poff",   # (nb + 1,) int64 offsets into the monomial table
        "b_pexp",   # (nterms, d) int64 exponents
        "b_pcoef",  # (nterms,)
        "mol_c",    # mollifier normalization constant
    ],
)

_EMPTY_F = np.empty(0, dtype=np.float64)
_EMPTY_I = np.empty(0, dtype=np.int64)
_EMPTY_F2 = np.empty((0, 0), dtype=np.float64)
_EMPTY_I2 = np.empty((0, 0), dtype=np.int64)
_EMPTY_F3 = np.empty((0, 0, 0), dtype=np.float64)


def pack_tape(tape, n):
    """Build a bump-free SurfPack for a compiled tape."""
    return SurfPack(
        ops=tape.ops,
        a1=tape.a1,
        a2=tape.a2,
        cv=tape.consts,
        n=n,
        nbumps=0,
        ts=_EMPTY_F,
        gam=_EMPTY_F2,
        dgam=_EMPTY_F2,
        ddgam=_EMPTY_F2,
        frames=_EMPTY_F3,
        dframes=_EMPTY_F3,
        nrm=_EMPTY_F2,
        dnrm=_EMPTY_F2,
        kap=_EMPTY_F,
        dkap=_EMPTY_F,
        delta=0.0,
        cut_r=0.0,
        b_amp=_EMPTY_F,
        b_t0=_EMPTY_F,
        b_eps0=_EMPTY_F,
        b_kflag=_EMPTY_F,
        b_wphi=_EMPTY_F2,
        b_wdphi=_EMPTY_F2,
        b_poff=np.zeros(1, dtype=np.int64),
        b_pexp=_EMPTY_I2,
        b_pcoef=_EMPTY_F,
        mol_c=1.0,
    )


# ----------------------------------------------------------------------
# tape evaluation
# ----------------------------------------------------------------------

@jitted
def _powi(a, k):
    kk = -k if k < 0 else k
    r = 1.0
    for _ in range(kk):
        r *= a
    if k < 0:
        return 1.0 / r
    return r


@jitted
def _dpow(a, k, order):
    """order-th derivative of a^k: k(k-1)...(k-order+1) a^(k-order).

    The falling-factorial coefficient is checked first so that integer
    powers of zero never divide by zero."""
    coef = 1
    kk = k
    for _ in range(order):
        coef *= kk
        kk -= 1
    if coef == 0:
        return 0.0
    return coef * _powi(a, kk)


@jitted
def _unary_f123(op, a):
    """Value and first three derivatives of the unary function `op` at a."""
    if op == OP_NEG:
        return -a, -1.0, 0.0, 0.0
    if op == OP_SIN:
        s = np.sin(a)
        c = np.cos(a)
        return s, c, -s, -c
    if op == OP_COS:
        s = np.sin(a)
        c = np.cos(a)
        return c, -s, -c, s
    if op == OP_EXP:
        e = np.exp(a)
        return e, e, e, e
    if op == OP_LOG:
        return np.log(a), 1.0 / a, -1.0 / (a * a), 2.0 / (a * a * a)
    if op == OP_SQRT:
        r = np.sqrt(a)
        return r, 0.5 / r, -0.25 / (a * r), 0.375 / (a * a * r)
    # OP_TANH
    t = np.tanh(a)
    s = 1.0 - t * t
    return t, s, -2.0 * t * s, s * (6.0 * t * t - 2.0)


@jitted
def tape_v(ops, a1, a2, cv, x):
    m = ops.shape[0]
    vals = np.empty(m)
    for i in range(m):
        op = ops[i]
        if op == OP_CONST:
            vals[i] = cv[i]
        elif op == OP_VAR:
            vals[i] = x[a1[i]]
        elif op == OP_ADD:
            vals[i] = vals[a1[i]] + vals[a2[i]]
        elif op == OP_SUB:
            vals[i] = vals[a1[i]] - vals[a2[i]]
        elif op == OP_MUL:
            vals[i] = vals[a1[i]] * vals[a2[i]]
        elif op == OP_DIV:
            vals[i] = vals[a1[i]] / vals[a2[i]]
        elif op == OP_POWI:
            vals[i] = _powi(vals[a1[i]], a2[i])
        else:
            f0, f1, f2, f3 = _unary_f123(op, vals[a1[i]])
            vals[i] = f0
    return vals[m - 1]


@jitted
def tape_vg(ops, a1, a2, cv, x, g):
    n = x.shape[0]
    m = ops.shape[0]
    vals = np.empty(m)
    grads = np.zeros((m, n))
    for i in range(m):
        op = ops[i]
        if op == OP_CONST:
            vals[i] = cv[i]
        elif op == OP_VAR:
            vals[i] = x[a1[i]]
            grads[i, a1[i]] = 1.0
        elif op == OP_ADD:
            ia, ib = a1[i], a2[i]
            vals[i] = vals[ia] + vals[ib]
            for k in range(n):
                grads[i, k] = grads[ia, k] + grads[ib, k]
        elif op == OP_SUB:
            ia, ib = a1[i], a2[i]
            vals[i] = vals[ia] - vals[ib]
            for k in range(n):
                grads[i, k] = grads[ia, k] - grads[ib, k]
        elif op == OP_MUL:
            ia, ib = a1[i], a2[i]
            va, vb = vals[ia], vals[ib]
            vals[i] = va * vb
            for k in range(n):
                grads[i, k] = grads[ia, k] * vb + grads[ib, k] * va
        elif op == OP_DIV:
            ia, ib = a1[i], a2[i]
            vb = vals[ib]
            v = vals[ia] / vb
            vals[i] = v
            for k in range(n):
                grads[i, k] = (grads[ia, k] - v * grads[ib, k]) / vb
        elif op == OP_POWI:
            ia, kk = a1[i], a2[i]
            va = vals[ia]
            vals[i] = _powi(va, kk)
            f1 = _dpow(va, kk, 1)
            for k in range(n):
                grads[i, k] = f1 * grads[ia, k]
        else:
            ia = a1[i]
            f0, f1, f2, f3 = _unary_f123(op, vals[ia])
            vals[i] = f0
            for k in range(n):
                grads[i, k] = f1 * grads[ia, k]
    for k in range(n):
        g[k] = grads[m - 1, k]
    return vals[m - 1]


@jitted
def tape_vgh_regs(ops, a1, a2, cv, x, vals, grads, hess):
    """Evaluate the tape keeping all registers (value, grad, Hessian)."""
    n = x.shape[0]
    m = ops.shape[0]
    for i in range(m):
        op = ops[i]
        for k in range(n):
            grads[i, k] = 0.0
            for l in range(n):
                hess[i, k, l] = 0.0
        if op == OP_CONST:
            vals[i] = cv[i]
        elif op == OP_VAR:
            vals[i] = x[a1[i]]
            grads[i, a1[i]] = 1.0
        elif op == OP_ADD:
            ia, ib = a1[i], a2[i]
            vals[i] = vals[ia] + vals[ib]
            for k in range(n):
                grads[i, k] = grads[ia, k] + grads[ib, k]
                for l in range(n):
                    hess[i, k, l] = hess[ia, k, l] + hess[ib, k, l]
        elif op == OP_SUB:
            ia, ib = a1[i], a2[i]
            vals[i] = vals[ia] - vals[ib]
            for k in range(n):
                grads[i, k] = grads[ia, k] - grads[ib, k]
                for l in range(n):
                    hess[i, k, l] = hess[ia, k, l] - hess[ib, k, l]
        elif op == OP_MUL:
            ia, ib = a1[i], a2[i]
            va, vb = vals[ia], vals[ib]
            vals[i] = va * vb
            for k in range(n):
                grads[i, k] = grads[ia, k] * vb + grads[ib, k] * va
                for l in range(n):
                    hess[i, k, l] = (
                        hess[ia, k, l] * vb
                        + hess[ib, k, l] * va
                        + grads[ia, k] * grads[ib, l]
                        + grads[ib, k] * grads[ia, l]
                    )
        elif op == OP_DIV:
            ia, ib = a1[i], a2[i]
            vb = vals[ib]
            v = vals[ia] / vb
            vals[i] = v
            for k in range(n):
                grads[i, k] = (grads[ia, k] - v * grads[ib, k]) / vb
            for k in range(n):
                for l in range(n):
                    hess[i, k, l] = (
                        hess[ia, k, l]
                        - v * hess[ib, k, l]
                        - grads[i, k] * grads[ib, l]
                        - grads[ib, k] * grads[i, l]
                    ) / vb
        elif op == OP_POWI:
            ia, kk = a1[i], a2[i]
            va = vals[ia]
            vals[i] = _powi(va, kk)
            f1 = _dpow(va, kk, 1)
            f2 = _dpow(va, kk, 2)
            for k in range(n):
                grads[i, k] = f1 * grads[ia, k]
                for l in range(n):
                    hess[i, k, l] = (
                        f1 * hess[ia, k, l] + f2 * grads[ia, k] * grads[ia, l]
                    )
        else:
            ia = a1[i]
            f0, f1, f2, f3 = _unary_f123(op, vals[ia])
            vals[i] = f0
            for k in range(n):
                grads[i, k] = f1 * grads[ia, k]
                for l in range(n):
                    hess[i, k, l] = (
                        f1 * hess[ia, k, l] + f2 * grads[ia, k] * grads[ia, l]
                    )
    return vals[m - 1]


@jitted
def tape_vgh(ops, a1, a2, cv, x, g, H):
    n = x.shape[0]
    m = ops.shape[0]
    vals = np.empty(m)
    grads = np.empty((m, n))
    hess = np.empty((m, n, n))
    v = tape_vgh_regs(ops, a1, a2, cv, x, vals, grads, hess)
    for k in range(n):
        g[k] = grads[m - 1, k]
        for l in range(n):
            H[k, l] = hess[m - 1, k, l]
    return v


@jitted
def tape_dir_from_regs(ops, a1, a2, cv, x, dx, vals, grads, hess, tg, tH):
    """Directional sweep along dx on top of stored registers.

    Returns the directional derivative of the value; fills tg and tH with
    the directional derivatives of the output gradient and Hessian (tH is
    the contraction of the third derivative tensor with dx).
    """
    n = x.shape[0]
    m = ops.shape[0]
    tvals = np.zeros(m)
    tgrads = np.zeros((m, n))
    thess = np.zeros((m, n, n))
    for i in range(m):
        op = ops[i]
        if op == OP_CONST:
            tvals[i] = 0.0
        elif op == OP_VAR:
            tvals[i] = dx[a1[i]]
        elif op == OP_ADD:
            ia, ib = a1[i], a2[i]
            tvals[i] = tvals[ia] + tvals[ib]
            for k in range(n):
                tgrads[i, k] = tgrads[ia, k] + tgrads[ib, k]
                for l in range(n):
                    thess[i, k, l] = thess[ia, k, l] + thess[ib, k, l]
        elif op == OP_SUB:
            ia, ib = a1[i], a2[i]
            tvals[i] = tvals[ia] - tvals[ib]
            for k in range(n):
                tgrads[i, k] = tgrads[ia, k] - tgrads[ib, k]
                for l in range(n):
                    thess[i, k, l] = thess[ia, k, l] - thess[ib, k, l]
        elif op == OP_MUL:
            ia, ib = a1[i], a2[i]
            va, vb = vals[ia], vals[ib]
            ta, tb = tvals[ia], tvals[ib]
            tvals[i] = ta * vb + va * tb
            for k in range(n):
                tgrads[i, k] = (
                    tgrads[ia, k] * vb
                    + grads[ia, k] * tb
                    + tgrads[ib, k] * va
                    + grads[ib, k] * ta
                )
                for l in range(n):
                    thess[i, k, l] = (
                        thess[ia, k, l] * vb
                        + hess[ia, k, l] * tb
                        + thess[ib, k, l] * va
                        + hess[ib, k, l] * ta
                        + tgrads[ia, k] * grads[ib, l]
                        + grads[ia, k] * tgrads[ib, l]
                        + tgrads[ib, k] * grads[ia, l]
                        + grads[ib, k] * tgrads[ia, l]
                    )
        elif op == OP_DIV:
            ia, ib = a1[i], a2[i]
            vb = vals[ib]
            v = vals[ia] / vb
            tb = tvals[ib]
            tv = (tvals[ia] - v * tb) / vb
            tvals[i] = tv
            # g = (ga - v gb)/vb ; differentiate in the direction
            for k in range(n):
                gk = (grads[ia, k] - v * grads[ib, k]) / vb
                tgrads[i, k] = (
                    tgrads[ia, k] - tv * grads[ib, k] - v * tgrads[ib, k] - gk * tb
                ) / vb
            for k in range(n):
                gk = (grads[ia, k] - v * grads[ib, k]) / vb
                for l in range(n):
                    gl = (grads[ia, l] - v * grads[ib, l]) / vb
                    Hkl = (
                        hess[ia, k, l]
                        - v * hess[ib, k, l]
                        - gk * grads[ib, l]
                        - grads[ib, k] * gl
                    ) / vb
                    thess[i, k, l] = (
                        thess[ia, k, l]
                        - tv * hess[ib, k, l]
                        - v * thess[ib, k, l]
                        - tgrads[i, k] * grads[ib, l]
                        - gk * tgrads[ib, l]
                        - tgrads[ib, k] * gl
                        - grads[ib, k] * tgrads[i, l]
                        - Hkl * tb
                    ) / vb
        elif op == OP_POWI:
            ia, kk = a1[i], a2[i]
            va = vals[ia]
            ta = tvals[ia]
            f1 = _dpow(va, kk, 1)
            f2 = _dpow(va, kk, 2)
            f3 = _dpow(va, kk, 3)
            tvals[i] = f1 * ta
            for k in range(n):
                tgrads[i, k] = f2 * ta * grads[ia, k] + f1 * tgrads[ia, k]
                for l in range(n):
                    thess[i, k, l] = (
                        f2 * ta * hess[ia, k, l]
                        + f1 * thess[ia, k, l]
                        + f3 * ta * grads[ia, k] * grads[ia, l]
                        + f2
                        * (
                            tgrads[ia, k] * grads[ia, l]
                            + grads[ia, k] * tgrads[ia, l]
                        )
                    )
        else:
            ia = a1[i]
            f0, f1, f2, f3 = _unary_f123(op, vals[ia])
            ta = tvals[ia]
            tvals[i] = f1 * ta
            for k in range(n):
                tgrads[i, k] = f2 * ta * grads[ia, k] + f1 * tgrads[ia, k]
                for l in range(n):
                    thess[i, k, l] = (
                        f2 * ta * hess[ia, k, l]
                        + f1 * thess[ia, k, l]
                        + f3 * ta * grads[ia, k] * grads[ia, l]
                        + f2
                        * (
                            tgrads[ia, k] * grads[ia, l]
                            + grads[ia, k] * tgrads[ia, l]
                        )
                    )
    for k in range(n):
        tg[k] = tgrads[m - 1, k]
        for l in range(n):
            tH[k, l] = thess[m - 1, k, l]
    return tvals[m - 1]


# ----------------------------------------------------------------------
# chart interpolation (uniform grid, Hermite)
# ----------------------------------------------------------------------

@jitted
def _locate(ts, t):
    m = ts.shape[0]
    dt = ts[1] - ts[0]
    i = int(np.floor((t - ts[0]) / dt))
    if i < 0:
        i = 0
    if i > m - 2:
        i = m - 2
    th = (t - ts[i]) / dt
    return i, th, dt


@jitted
def chart_gamma(surf, t, p, dp):
    """Quintic Hermite interpolation of the base geodesic and its velocity."""
    i, th, dt = _locate(surf.ts, t)
    t2 = th * th
    t3 = t2 * th
    t4 = t3 * th
    t5 = t4 * th
    h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5
    h1 = th - 6.0 * t3 + 8.0 * t4 - 3.0 * t5
    h2 = 0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5
    h3 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5
    h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5
    h5 = 0.5 * t3 - t4 + 0.5 * t5
    d0 = (-30.0 * t2 + 60.0 * t3 - 30.0 * t4) / dt
    d1 = (1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4) / dt
    d2 = (th - 4.5 * t2 + 6.0 * t3 - 2.5 * t4) / dt
    d3 = (30.0 * t2 - 60.0 * t3 + 30.0 * t4) / dt
    d4 = (-12.0 * t2 + 28.0 * t3 - 15.0 * t4) / dt
    d5 = (1.5 * t2 - 4.0 * t3 + 2.5 * t4) / dt
    n = surf.gam.shape[1]
    for k in range(n):
        p0 = surf.gam[i, k]
        m0 = surf.dgam[i, k]
        c0 = surf.ddgam[i, k]
        p1 = surf.gam[i + 1, k]
        m1 = surf.dgam[i + 1, k]
        c1 = surf.ddgam[i + 1, k]
        p[k] = (
            h0 * p0
            + h1 * dt * m0
            + h2 * dt * dt * c0
            + h3 * p1
            + h4 * dt * m1
            + h5 * dt * dt * c1
        )
        dp[k] = (
            d0 * p0
            + d1 * dt * m0
            + d2 * dt * dt * c0
            + d3 * p1
            + d4 * dt * m1
            + d5 * dt * dt * c1
        )


@jitted
def _cubic_weights(th, dt):
    t2 = th * th
    t3 = t2 * th
    h00 = 2.0 * t3 - 3.0 * t2 + 1.0
    h10 = t3 - 2.0 * t2 + th
    h01 = -2.0 * t3 + 3.0 * t2
    h11 = t3 - t2
    g00 = (6.0 * t2 - 6.0 * th) / dt
    g10 = 3.0 * t2 - 4.0 * th + 1.0
    g01 = (-6.0 * t2 + 6.0 * th) / dt
    g11 = 3.0 * t2 - 2.0 * th
    return h00, h10 * dt, h01, h11 * dt, g00, g10, g01, g11


@jitted
def chart_frame(surf, t, j, e, de):
    i, th, dt = _locate(surf.ts, t)
    h00, h10, h01, h11, g00, g10, g01, g11 = _cubic_weights(th, dt)
    n = surf.gam.shape[1]
    for k in range(n):
        p0 = surf.frames[i, j, k]
        m0 = surf.dframes[i, j, k]
        p1 = surf.frames[i + 1, j, k]
        m1 = surf.dframes[i + 1, j, k]
        e[k] = h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1
        de[k] = g00 * p0 + g10 * m0 + g01 * p1 + g11 * m1


@jitted
def chart_normal(surf, t, v, dv):
    i, th, dt = _locate(surf.ts, t)
    h00, h10, h01, h11, g00, g10, g01, g11 = _cubic_weights(th, dt)
    n = surf.gam.shape[1]
    for k in range(n):
        p0 = surf.nrm[i, k]
        m0 = surf.dnrm[i, k]
        p1 = surf.nrm[i + 1, k]
        m1 = surf.dnrm[i + 1, k]
        v[k] = h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1
        dv[k] = g00 * p0 + g10 * m0 + g01 * p1 + g11 * m1


@jitted
def chart_kappa(surf, t):
    i, th, dt = _locate(surf.ts, t)
    h00, h10, h01, h11, g00, g10, g01, g11 = _cubic_weights(th, dt)
    p0 = surf.kap[i]
    m0 = surf.dkap[i]
    p1 = surf.kap[i + 1]
    m1 = surf.dkap[i + 1]
    v = h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1
    dv = g00 * p0 + g10 * m0 + g01 * p1 + g11 * m1
    return v, dv


# ----------------------------------------------------------------------
# tube coordinates: Newton inverse of
#   T(y0, y, z) = gamma(y0) + sum_j y_j e_j(y0) + z n(y0)
# ----------------------------------------------------------------------

TUBE_INSIDE = 0
TUBE_OUTSIDE = 1
TUBE_FAIL = -1


@jitted
def tube_far(surf, x):
    """Cheap reject: True when x is certainly outside the bump tube."""
    n = surf.n
    ms = surf.ts.shape[0]
    if ms == 0:
        return True
    stride = ms // 48
    if stride < 1:
        stride = 1
    best = 1e300
    i = 0
    while i < ms:
        s = 0.0
        for k in range(n):
            dd = x[k] - surf.gam[i, k]
            s += dd * dd
        if s < best:
            best = s
        i += stride
    return best > (3.0 * surf.delta + 0.25) ** 2


@jitted
def tube_coords(surf, x, yout):
    """Invert the tube map at x.  yout receives (y0, y_1..y_d, z)."""
    n = surf.n
    d = surf.frames.shape[1]
    ms = surf.ts.shape[0]
    # coarse nearest-sample scan for the seed and a cheap far rejection
    stride = ms // 48
    if stride < 1:
        stride = 1
    best = 1e300
    ibest = 0
    i = 0
    while i < ms:
        s = 0.0
        for k in range(n):
            dd = x[k] - surf.gam[i, k]
            s += dd * dd
        if s < best:
            best = s
            ibest = i
        i += stride
    if best > (4.0 * surf.delta + 0.5) ** 2:
        return TUBE_OUTSIDE
    y0 = surf.ts[ibest]
    for j in range(d):
        yout[1 + j] = 0.0
    yout[0] = y0
    yout[1 + d] = 0.0

    p = np.empty(n)
    dp = np.empty(n)
    nv = np.empty(n)
    dnv = np.empty(n)
    e = np.empty((d, n))
    de = np.empty((d, n))
    J = np.empty((n, n))
    r = np.empty(n)
    t_lo = surf.ts[0] - 2.0 * (surf.ts[1] - surf.ts[0])
    t_hi = surf.ts[ms - 1] + 2.0 * (surf.ts[1] - surf.ts[0])
    ok = False
    for _ in range(40):
        y0 = yout[0]
        if y0 < t_lo or y0 > t_hi:
            return TUBE_OUTSIDE
        # Hermite evaluation extrapolates smoothly on the end segments
        chart_gamma(surf, y0, p, dp)
        chart_normal(surf, y0, nv, dnv)
        for j in range(d):
            ej = e[j]
            dej = de[j]
            chart_frame(surf, y0, j, ej, dej)
        z = yout[1 + d]
        for k in range(n):
            acc = p[k] + z * nv[k]
            dacc = dp[k] + z * dnv[k]
            for j in range(d):
                acc += yout[1 + j] * e[j, k]
                dacc += yout[1 + j] * de[j, k]
            r[k] = acc - x[k]
            J[k, 0] = dacc
            for j in range(d):
                J[k, 1 + j] = e[j, k]
            J[k, 1 + d] = nv[k]
        rn = 0.0
        for k in range(n):
            rn += r[k] * r[k]
        rn = np.sqrt(rn)
        if rn < 1e-13:
            ok = True
            break
        step = np.linalg.solve(J, r)
        for k in range(n):
            yout[k] -= step[k]
    if not ok:
        return TUBE_FAIL
    yy = 0.0
    for j in range(d):
        yy += yout[1 + j] * yout[1 + j]
    if np.sqrt(yy) >= surf.delta:
        return TUBE_OUTSIDE
    return TUBE_INSIDE


@jitted
def tube_jacobian(surf, yout, J):
    """Columns of dT/d(y0, y, z) at tube coordinates yout."""
    n = surf.n
    d = surf.frames.shape[1]
    tcl = yout[0]
    p = np.empty(n)
    dp = np.empty(n)
    nv = np.empty(n)
    dnv = np.empty(n)
    e = np.empty(n)
    de = np.empty(n)
    chart_gamma(surf, tcl, p, dp)
    chart_normal(surf, tcl, nv, dnv)
    z = yout[1 + d]
    for k in range(n):
        J[k, 0] = dp[k] + z * dnv[k]
        J[k, 1 + d] = nv[k]
    for j in range(d):
        chart_frame(surf, tcl, j, e, de)
        for k in range(n):
            J[k, 1 + j] = e[k]
            J[k, 0] += yout[1 + j] * de[k]


# ----------------------------------------------------------------------
# mollifier, cutoff, bump fields
# ----------------------------------------------------------------------

@jitted
def mollifier012(s, c):
    """c*exp(-1/(1-s^2)) on (-1,1) with first and second derivatives."""
    if s <= -1.0 + 1e-12 or s >= 1.0 - 1e-12:
        return 0.0, 0.0, 0.0
    w = 1.0 - s * s
    f = c * np.exp(-1.0 / w)
    g = -2.0 * s / (w * w)
    dg = (-2.0 - 6.0 * s * s) / (w * w * w)
    return f, f * g, f * (g * g + dg)


@jitted
def _smoothstep01(w):
    if w <= 0.0:
        return 0.0, 0.0
    if w >= 1.0:
        return 1.0, 0.0
    ea = np.exp(-1.0 / w)
    eb = np.exp(-1.0 / (1.0 - w))
    s = ea / (ea + eb)
    da = ea / (w * w)
    db = eb / ((1.0 - w) * (1.0 - w))
    ds = (da * eb + ea * db) / ((ea + eb) * (ea + eb))
    return s, ds


@jitted
def cutoff_rho2(rho2, cut_r):
    """Radial cutoff in |y|: 1 inside cut_r/2, 0 outside cut_r; C-infinity."""
    s = rho2 / (cut_r * cut_r)
    w = (1.0 - s) / 0.75
    c, dc_dw = _smoothstep01(w)
    dc_ds = -dc_dw / 0.75
    return c, dc_ds / (cut_r * cut_r)   # value, d/d(rho2)


@jitted
def bump_chart_value(surf, y0, y, out_d):
    """Bump factor B(y0, y) summed over bumps, with chart-space gradient.

    out_d receives (dB/dy0, dB/dy_1..dB/dy_d).  The radial cutoff is not
    included here; callers fold it in.
    """
    d = surf.frames.shape[1]
    B = 0.0
    for a in range(1 + d):
        out_d[a] = 0.0
    kapv, dkapv = chart_kappa(surf, y0)
    for b in range(surf.nbumps):
        eps0 = surf.b_eps0[b]
        s = (y0 - surf.b_t0[b]) / eps0
        f, f1, f2 = mollifier012(s, surf.mol_c)
        phi = f / eps0
        dphi = f1 / (eps0 * eps0)
        ddphi = f2 / (eps0 * eps0 * eps0)
        if phi == 0.0 and dphi == 0.0 and ddphi == 0.0:
            continue
        lin = 0.0
        lin2 = 0.0
        for j in range(d):
            lin += surf.b_wphi[b, j] * y[j]
            lin2 += surf.b_wdphi[b, j] * y[j]
        poly = 0.0
        for t in range(surf.b_poff[b], surf.b_poff[b + 1]):
            term = surf.b_pcoef[t]
            for j in range(d):
                term *= _powi(y[j], surf.b_pexp[t, j])
            poly += term
        if surf.b_kflag[b] > 0.5:
            kinv = 1.0 / kapv
            dkinv = -dkapv / (kapv * kapv)
        else:
            kinv = 1.0
            dkinv = 0.0
        amp = surf.b_amp[b]
        core = phi * (lin + poly) + dphi * lin2
        B += amp * kinv * core
        out_d[0] += amp * (
            dkinv * core + kinv * (dphi * (lin + poly) + ddphi * lin2)
        )
        for j in range(d):
            dpoly_j = 0.0
            for t in range(surf.b_poff[b], surf.b_poff[b + 1]):
                kj = surf.b_pexp[t, j]
                if kj > 0:
                    term = surf.b_pcoef[t] * kj * _powi(y[j], kj - 1)
                    for jj in range(d):
                        if jj != j:
                            term *= _powi(y[jj], surf.b_pexp[t, jj])
                    dpoly_j += term
            out_d[1 + j] += amp * kinv * (
                phi * (surf.b_wphi[b, j] + dpoly_j) + dphi * surf.b_wdphi[b, j]
            )
    return B


@jitted
def bump_vg(surf, x, g):
    """Value and exact ambient gradient of the realized bump field.

    psi(x) = |grad Q(x)| * B(y0(x), y(x)) * cut(|y(x)|), zero outside the
    tube.  The |grad Q| factor makes the induced first-order metric
    perturbation in tube coordinates equal 2*psi*Ctilde for surfaces whose
    gradient is not unit on M.
    """
    n = surf.n
    d = surf.frames.shape[1]
    for k in range(n):
        g[k] = 0.0
    c = np.empty(n)
    status = tube_coords(surf, x, c)
    if status == TUBE_OUTSIDE:
        return 0.0
    if status == TUBE_FAIL:
        return np.nan
    y0 = c[0]
    y = c[1 : 1 + d]
    rho2 = 0.0
    for j in range(d):
        rho2 += y[j] * y[j]
    cut, dcut_drho2 = cutoff_rho2(rho2, surf.cut_r)
    if cut == 0.0:
        # the chart gradient also vanishes identically outside the cutoff
        return 0.0
    dB = np.empty(1 + d)
    B = bump_chart_value(surf, y0, y, dB)
    # chart-space gradient of B*cut, z-component zero
    gc = np.empty(n)
    gc[0] = dB[0] * cut
    for j in range(d):
        gc[1 + j] = dB[1 + j] * cut + B * dcut_drho2 * 2.0 * y[j]
    gc[1 + d] = 0.0
    J = np.empty((n, n))
    tube_jacobian(surf, c, J)
    Jinv = np.linalg.inv(J)
    # base gradient norm factor
    gq = np.empty(n)
    Hq = np.empty((n, n))
    tape_vgh(surf.ops, surf.a1, surf.a2, surf.cv, x, gq, Hq)
    gn = 0.0
    for k in range(n):
        gn += gq[k] * gq[k]
    gn = np.sqrt(gn)
    psi0 = B * cut
    for k in range(n):
        acc = 0.0
        for a in range(n):
            acc += gc[a] * Jinv[a, k]
        dgn_k = 0.0
        for l in range(n):
            dgn_k += Hq[k, l] * gq[l]
        dgn_k /= gn
        g[k] = gn * acc + psi0 * dgn_k
    return gn * psi0


@jitted
def bump_vgh(surf, x, g, H, h_fd):
    """Bump value, exact gradient, and finite-difference Hessian (of the
    exact gradient), symmetrized."""
    n = surf.n
    v = bump_vg(surf, x, g)
    xp = np.empty(n)
    gp = np.empty(n)
    gm = np.empty(n)
    for k in range(n):
        for l in range(n):
            H[k, l] = 0.0
    for k in range(n):
        for l in range(n):
            xp[l] = x[l]
        xp[k] = x[k] + h_fd
        vp = bump_vg(surf, xp, gp)
        xp[k] = x[k] - h_fd
        vm = bump_vg(surf, xp, gm)
        for l in range(n):
            H[l, k] = (gp[l] - gm[l]) / (2.0 * h_fd)
    for k in range(n):
        for l in range(k + 1, n):
            s = 0.5 * (H[k, l] + H[l, k])
            H[k, l] = s
            H[l, k] = s
    return v


# ----------------------------------------------------------------------
# combined surface evaluation
# ----------------------------------------------------------------------

@jitted
def surf_v(surf, x):
    v = tape_v(surf.ops, surf.a1, surf.a2, surf.cv, x)
    if surf.nbumps > 0 and not tube_far(surf, x):
        g = np.empty(surf.n)
        v += bump_vg(surf, x, g)
    return v


@jitted
def surf_vg(surf, x, g):
    v = tape_vg(surf.ops, surf.a1, surf.a2, surf.cv, x, g)
    if surf.nbumps > 0 and not tube_far(surf, x):
        gb = np.empty(surf.n)
        v += bump_vg(surf, x, gb)
        for k in range(surf.n):
            g[k] += gb[k]
    return v


@jitted
def surf_vgh(surf, x, g, H):
    v = tape_vgh(surf.ops, surf.a1, surf.a2, surf.cv, x, g, H)
    if surf.nbumps > 0 and not tube_far(surf, x):
        gb = np.empty(surf.n)
        Hb = np.empty((surf.n, surf.n))
        v += bump_vgh(surf, x, gb, Hb, 1e-5)
        for k in range(surf.n):
            g[k] += gb[k]
            for l in range(surf.n):
                H[k, l] += Hb[k, l]
    return v


@jitted
def shorten_sweeps(surf, P, n_sweeps, tol_decrease, surface_tol):
    """Alternating midpoint-projection sweeps over a closed polyline.

    Returns (sweeps_done, length, converged_flag); P is updated in place.
    """
    m = P.shape[0]
    n = P.shape[1]
    mid = np.empty(n)
    length = 0.0
    for i in range(m):
        s = 0.0
        for k in range(n):
            dd = P[(i + 1) % m, k] - P[i, k]
            s += dd * dd
        length += np.sqrt(s)
    done = 0
    converged = 0
    for sweep in range(n_sweeps):
        for parity in range(2):
            i = parity
            while i < m:
                for k in range(n):
                    mid[k] = 0.5 * (P[(i - 1) % m, k] + P[(i + 1) % m, k])
                st = project_point(surf, mid, surface_tol, 50)
                if st == 0:
                    for k in range(n):
                        P[i, k] = mid[k]
                i += 2
        new_length = 0.0
        for i in range(m):
            s = 0.0
            for k in range(n):
                dd = P[(i + 1) % m, k] - P[i, k]
                s += dd * dd
            new_length += np.sqrt(s)
        done = sweep + 1
        dec = length - new_length
        length = new_length
        if 0.0 <= dec <= tol_decrease:
            converged = 1
            break
        if length < 1e-3:
            break
    return done, length, converged


@jitted
def project_point(surf, x, tol, maxit):
    """Newton projection onto {Q=0} along grad Q.  Returns 0 on success,
    1 on divergence, 2 on singular gradient."""
    n = surf.n
    g = np.empty(n)
    for _ in range(maxit):
        v = surf_vg(surf, x, g)
        gn2 = 0.0
        for k in range(n):
            gn2 += g[k] * g[k]
        if gn2 < 1e-20:
            return 2
        if np.abs(v) <= tol:
            return 0
        step = v / gn2
        for k in range(n):
            x[k] -= step * g[k]
    v = surf_v(surf, x)
    if np.abs(v) <= tol:
        return 0
    return 1
