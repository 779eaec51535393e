"""Adaptive Runge-Kutta integration of the geodesic flow.

The stepper is the 12-stage Dormand-Prince 8(5,3) pair with the combined
5th/3rd-order error norm.  After every accepted step the ambient point is
projected back onto {Q=0}, the velocity is projected onto the tangent
plane, and (optionally) the speed is renormalized to its initial value,
which the exact flow conserves.  State layouts by mode:

* mode 0: ``y = [x(n), u(n)]``
* mode 1: ``y = [x, u, e_1..e_d]`` with parallel-transported frame vectors
* mode 2: ``y = [x, u, dx_1, du_1, ..., dx_m, du_m]`` variational columns
"""

import numpy as np

from .accel import jitted
from . import _rk_tableau as _rk
from .kernels import (
    surf_v,
    surf_vg,
    surf_vgh,
    tape_vgh_regs,
    tape_dir_from_regs,
    project_point,
)

RK_A = _rk.A
RK_B = _rk.B
RK_C = _rk.C
RK_E3 = _rk.E3
RK_E5 = _rk.E5
N_STAGES = _rk.N_STAGES

OK = 0
UNDERFLOW = 1
PROJ_FAIL = 2
MAXSTEPS = 3
NO_EVENT = 4

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERR_EXP = -1.0 / 8.0


@jitted
def flow_rhs(surf, mode, y, out):
    """Geodesic vector field xdot = u, udot = kappa(x,u) n(x), plus the
    parallel-transport or variational blocks depending on mode."""
    n = surf.n
    x = y[:n]
    u = y[n : 2 * n]
    g = np.empty(n)
    H = np.empty((n, n))
    surf_vgh(surf, x, g, H)
    gn2 = 0.0
    for k in range(n):
        gn2 += g[k] * g[k]
    gn = np.sqrt(gn2)
    if gn < 1e-300:
        for k in range(out.shape[0]):
            out[k] = np.nan
        return
    kap = 0.0
    for k in range(n):
        hk = 0.0
        for l in range(n):
            hk += H[k, l] * u[l]
        kap += hk * u[k]
    kap /= gn
    for k in range(n):
        out[k] = u[k]
        out[n + k] = -kap * g[k] / gn
    if mode == 1:
        d = (y.shape[0] - 2 * n) // n
        for j in range(d):
            off = 2 * n + j * n
            hu_e = 0.0
            for k in range(n):
                hk = 0.0
                for l in range(n):
                    hk += H[k, l] * u[l]
                hu_e += hk * y[off + k]
            coef = hu_e / gn
            for k in range(n):
                out[off + k] = -coef * g[k] / gn
    elif mode == 2:
        m = (y.shape[0] - 2 * n) // (2 * n)
        mt = surf.ops.shape[0]
        vals = np.empty(mt)
        grads = np.empty((mt, n))
        hessr = np.empty((mt, n, n))
        tape_vgh_regs(surf.ops, surf.a1, surf.a2, surf.cv, x, vals, grads, hessr)
        tg = np.empty(n)
        tH = np.empty((n, n))
        nhat = np.empty(n)
        for k in range(n):
            nhat[k] = -g[k] / gn
        for c in range(m):
            off = 2 * n + c * 2 * n
            dx = y[off : off + n]
            du = y[off + n : off + 2 * n]
            tape_dir_from_regs(
                surf.ops, surf.a1, surf.a2, surf.cv, x, dx, vals, grads, hessr, tg, tH
            )
            # tg = H dx, tH = third-derivative contraction with dx
            dgn = 0.0
            for k in range(n):
                dgn += g[k] * tg[k]
            dgn /= gn
            dkap = 0.0
            for k in range(n):
                a1 = 0.0
                a2 = 0.0
                for l in range(n):
                    a1 += tH[k, l] * u[l]
                    a2 += H[k, l] * du[l]
                dkap += a1 * u[k] + 2.0 * a2 * u[k]
            dkap = dkap / gn - kap * dgn / gn
            for k in range(n):
                dnhat = -tg[k] / gn + g[k] * dgn / gn2
                out[off + k] = du[k]
                out[off + n + k] = dkap * nhat[k] + kap * dnhat
    return


@jitted
def post_project(surf, mode, y, unorm0, renorm, proj_tol):
    """Re-impose the constraints after an accepted step.  Returns status."""
    n = surf.n
    x = y[:n]
    st = project_point(surf, x, proj_tol, 20)
    if st != 0:
        return PROJ_FAIL
    g = np.empty(n)
    H = np.empty((n, n))
    surf_vgh(surf, x, g, H)
    gn2 = 0.0
    for k in range(n):
        gn2 += g[k] * g[k]
    u = y[n : 2 * n]
    gu = 0.0
    for k in range(n):
        gu += g[k] * u[k]
    for k in range(n):
        u[k] -= gu / gn2 * g[k]
    un = 0.0
    for k in range(n):
        un += u[k] * u[k]
    un = np.sqrt(un)
    drift = np.abs(un - unorm0)
    if renorm == 1 and un > 0.0:
        s = unorm0 / un
        for k in range(n):
            u[k] *= s
    if mode == 1:
        d = (y.shape[0] - 2 * n) // n
        un2 = 0.0
        for k in range(n):
            un2 += u[k] * u[k]
        for j in range(d):
            off = 2 * n + j * n
            e = y[off : off + n]
            ge = 0.0
            for k in range(n):
                ge += g[k] * e[k]
            for k in range(n):
                e[k] -= ge / gn2 * g[k]
            ue = 0.0
            for k in range(n):
                ue += u[k] * e[k]
            for k in range(n):
                e[k] -= ue / un2 * u[k]
            for jj in range(j):
                off2 = 2 * n + jj * n
                e2 = y[off2 : off2 + n]
                ee = 0.0
                for k in range(n):
                    ee += e2[k] * e[k]
                for k in range(n):
                    e[k] -= ee * e2[k]
            en = 0.0
            for k in range(n):
                en += e[k] * e[k]
            en = np.sqrt(en)
            if en < 1e-12:
                return PROJ_FAIL
            for k in range(n):
                e[k] /= en
    elif mode == 2:
        m = (y.shape[0] - 2 * n) // (2 * n)
        un2 = 0.0
        for k in range(n):
            un2 += u[k] * u[k]
        for c in range(m):
            off = 2 * n + c * 2 * n
            dx = y[off : off + n]
            du = y[off + n : off + 2 * n]
            gdx = 0.0
            for k in range(n):
                gdx += g[k] * dx[k]
            for k in range(n):
                dx[k] -= gdx / gn2 * g[k]
            cc = 0.0
            for k in range(n):
                hk = 0.0
                for l in range(n):
                    hk += H[k, l] * dx[l]
                cc += hk * u[k] + g[k] * du[k]
            for k in range(n):
                du[k] -= cc / gn2 * g[k]
            if renorm == 1:
                udu = 0.0
                for k in range(n):
                    udu += u[k] * du[k]
                for k in range(n):
                    du[k] -= udu / un2 * u[k]
    return OK


@jitted
def rk_attempt(surf, mode, y, h, rtol, atol, K, ynew):
    """One embedded step attempt.  Fills K and ynew, returns the DOP853
    error norm (error <= 1 means accept)."""
    L = y.shape[0]
    flow_rhs(surf, mode, y, K[0])
    yi = np.empty(L)
    for i in range(1, N_STAGES):
        for k in range(L):
            acc = 0.0
            for j in range(i):
                aij = RK_A[i, j]
                if aij != 0.0:
                    acc += aij * K[j, k]
            yi[k] = y[k] + h * acc
        flow_rhs(surf, mode, yi, K[i])
    for k in range(L):
        acc = 0.0
        for j in range(N_STAGES):
            bj = RK_B[j]
            if bj != 0.0:
                acc += bj * K[j, k]
        ynew[k] = y[k] + h * acc
    flow_rhs(surf, mode, ynew, K[N_STAGES])
    err5 = 0.0
    err3 = 0.0
    for k in range(L):
        a5 = 0.0
        a3 = 0.0
        for j in range(N_STAGES + 1):
            a5 += RK_E5[j] * K[j, k]
            a3 += RK_E3[j] * K[j, k]
        ay = np.abs(y[k])
        an = np.abs(ynew[k])
        sc = atol + rtol * (ay if ay > an else an)
        err5 += (a5 / sc) ** 2
        err3 += (a3 / sc) ** 2
    if err5 == 0.0 and err3 == 0.0:
        return 0.0
    denom = err5 + 0.01 * err3
    return np.abs(h) * err5 / np.sqrt(denom * L)


@jitted
def rk_single(surf, mode, y, h, ynew):
    """One fixed step of the 8th-order scheme, no error control."""
    L = y.shape[0]
    K = np.empty((N_STAGES + 1, L))
    flow_rhs(surf, mode, y, K[0])
    yi = np.empty(L)
    for i in range(1, N_STAGES):
        for k in range(L):
            acc = 0.0
            for j in range(i):
                aij = RK_A[i, j]
                if aij != 0.0:
                    acc += aij * K[j, k]
            yi[k] = y[k] + h * acc
        flow_rhs(surf, mode, yi, K[i])
    for k in range(L):
        acc = 0.0
        for j in range(N_STAGES):
            bj = RK_B[j]
            if bj != 0.0:
                acc += bj * K[j, k]
        ynew[k] = y[k] + h * acc


@jitted
def integrate_adaptive(
    surf, mode, y0, t0, t1, rtol, atol, h0, max_steps, renorm, proj_tol, store,
    max_step=np.inf,
):
    """Adaptive integration from t0 to t1 (either direction).

    Returns (y_final, status, naccept, nreject, max_drift, ts, ys) where the
    trajectory arrays are filled only when store == 1.
    """
    L = y0.shape[0]
    n = surf.n
    y = y0.copy()
    t = t0
    direction = 1.0 if t1 >= t0 else -1.0
    span = np.abs(t1 - t0)
    unorm0 = 0.0
    for k in range(n):
        unorm0 += y[n + k] ** 2
    unorm0 = np.sqrt(unorm0)
    cap = 256
    ts = np.empty(cap)
    ys = np.empty((cap, L))
    count = 0
    if store == 1:
        ts[0] = t
        for k in range(L):
            ys[0, k] = y[k]
        count = 1
    if span == 0.0:
        return y, OK, 0, 0, 0.0, ts[:count], ys[:count]
    h = np.abs(h0)
    if h > span:
        h = span
    if h > max_step:
        h = max_step
    K = np.empty((N_STAGES + 1, L))
    ynew = np.empty(L)
    naccept = 0
    nreject = 0
    max_drift = 0.0
    status = MAXSTEPS
    for _ in range(max_steps):
        remaining = np.abs(t1 - t)
        if remaining <= 1e-14 * (1.0 + np.abs(t1)):
            status = OK
            break
        if h > remaining:
            h = remaining
        if h < 1e-14 * (1.0 + np.abs(t)):
            status = UNDERFLOW
            break
        err = rk_attempt(surf, mode, y, direction * h, rtol, atol, K, ynew)
        if np.isnan(err) or err > 1.0:
            nreject += 1
            if np.isnan(err):
                h *= 0.1
            else:
                fac = SAFETY * err ** ERR_EXP
                if fac < MIN_FACTOR:
                    fac = MIN_FACTOR
                h *= fac
            continue
        # accept
        t = t + direction * h
        for k in range(L):
            y[k] = ynew[k]
        un = 0.0
        for k in range(n):
            un += y[n + k] ** 2
        un = np.sqrt(un)
        if np.abs(un - unorm0) > max_drift:
            max_drift = np.abs(un - unorm0)
        st = post_project(surf, mode, y, unorm0, renorm, proj_tol)
        if st != OK:
            status = st
            break
        naccept += 1
        if store == 1:
            if count >= cap:
                cap2 = cap * 2
                ts2 = np.empty(cap2)
                ys2 = np.empty((cap2, L))
                for i in range(count):
                    ts2[i] = ts[i]
                    for k in range(L):
                        ys2[i, k] = ys[i, k]
                ts = ts2
                ys = ys2
                cap = cap2
            ts[count] = t
            for k in range(L):
                ys[count, k] = y[k]
            count += 1
        if err == 0.0:
            fac = MAX_FACTOR
        else:
            fac = SAFETY * err ** ERR_EXP
            if fac > MAX_FACTOR:
                fac = MAX_FACTOR
            if fac < MIN_FACTOR:
                fac = MIN_FACTOR
        h *= fac
        if h > max_step:
            h = max_step
    return y, status, naccept, nreject, max_drift, ts[:count], ys[:count]


@jitted
def integrate_grid(surf, mode, y0, t0, dt, nsteps, renorm, proj_tol):
    """Fixed-step integration storing the state at every grid time."""
    L = y0.shape[0]
    ys = np.empty((nsteps + 1, L))
    y = y0.copy()
    n = surf.n
    unorm0 = 0.0
    for k in range(n):
        unorm0 += y[n + k] ** 2
    unorm0 = np.sqrt(unorm0)
    for k in range(L):
        ys[0, k] = y[k]
    ynew = np.empty(L)
    for i in range(nsteps):
        rk_single(surf, mode, y, dt, ynew)
        for k in range(L):
            y[k] = ynew[k]
        st = post_project(surf, mode, y, unorm0, renorm, proj_tol)
        if st != OK:
            return ys[: i + 1], st
        for k in range(L):
            ys[i + 1, k] = y[k]
    return ys, OK


@jitted
def integrate_events(
    surf,
    y0,
    t0,
    plane_p,
    plane_w,
    dirsign,
    n_hits,
    t_skip,
    tmax,
    rtol,
    atol,
    h0,
    renorm,
    proj_tol,
    tdir,
    max_step=np.inf,
):
    """Integrate (mode 0) until the n_hits-th transverse crossing of the
    plane <x - p, w> = 0 with <u, w>*dirsign > 0.

    Returns (y_hit, t_hit, status, nhits_found).  tdir = +-1 selects the
    time direction; t_skip suppresses crossings with |t - t0| < t_skip.
    """
    L = y0.shape[0]
    n = surf.n
    y = y0.copy()
    t = t0
    unorm0 = 0.0
    for k in range(n):
        unorm0 += y[n + k] ** 2
    unorm0 = np.sqrt(unorm0)
    h = np.abs(h0)
    if h > max_step:
        h = max_step
    K = np.empty((N_STAGES + 1, L))
    ynew = np.empty(L)
    ytmp = np.empty(L)
    yref = np.empty(L)
    g_prev = 0.0
    for k in range(n):
        g_prev += (y[k] - plane_p[k]) * plane_w[k]
    hits = 0
    max_steps = 100_000_000
    for _ in range(max_steps):
        if np.abs(t - t0) >= tmax:
            return y, t, NO_EVENT, hits
        if h < 1e-14 * (1.0 + np.abs(t)):
            return y, t, UNDERFLOW, hits
        err = rk_attempt(surf, 0, y, tdir * h, rtol, atol, K, ynew)
        if np.isnan(err) or err > 1.0:
            if np.isnan(err):
                h *= 0.1
            else:
                fac = SAFETY * err ** ERR_EXP
                if fac < MIN_FACTOR:
                    fac = MIN_FACTOR
                h *= fac
            continue
        t_prev = t
        for k in range(L):
            yref[k] = y[k]
        t = t + tdir * h
        for k in range(L):
            y[k] = ynew[k]
        st = post_project(surf, 0, y, unorm0, renorm, proj_tol)
        if st != OK:
            return y, t, st, hits
        g_new = 0.0
        for k in range(n):
            g_new += (y[k] - plane_p[k]) * plane_w[k]
        if (
            g_prev * g_new <= 0.0
            and (g_prev != 0.0 or np.abs(t_prev - t0) > 1e-14)
            and np.abs(t - t0) > t_skip
        ):
            # refine the crossing time with Newton from the pre-step state
            tau = 0.5 * (t_prev + t)
            gval = g_new
            ok = False
            for _ in range(40):
                dt_loc = tau - t_prev
                rk_single(surf, 0, yref, dt_loc, ytmp)
                gval = 0.0
                dgval = 0.0
                for k in range(n):
                    gval += (ytmp[k] - plane_p[k]) * plane_w[k]
                    dgval += ytmp[n + k] * plane_w[k]
                if np.abs(gval) < 1e-12:
                    ok = True
                    break
                if dgval == 0.0:
                    break
                tau_next = tau - gval / dgval
                lo = t_prev if t_prev < t else t
                hi = t if t_prev < t else t_prev
                if tau_next < lo:
                    tau_next = lo
                if tau_next > hi:
                    tau_next = hi
                if np.abs(tau_next - tau) < 1e-16 * (1.0 + np.abs(tau)):
                    tau = tau_next
                    ok = True
                    break
                tau = tau_next
            if ok and np.abs(tau - t0) > t_skip:
                udir = 0.0
                for k in range(n):
                    udir += ytmp[n + k] * plane_w[k]
                if udir * dirsign > 0.0:
                    hits += 1
                    if hits >= n_hits:
                        st = post_project(surf, 0, ytmp, unorm0, renorm, proj_tol)
                        return ytmp, tau, OK, hits
        g_prev = g_new
        if err == 0.0:
            fac = MAX_FACTOR
        else:
            fac = SAFETY * err ** ERR_EXP
            if fac > MAX_FACTOR:
                fac = MAX_FACTOR
            if fac < MIN_FACTOR:
                fac = MIN_FACTOR
        h *= fac
        if h > max_step:
            h = max_step
    return y, t, MAXSTEPS, hits
