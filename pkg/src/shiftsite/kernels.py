"""Hot loops of the QP solver.

The ADMM iteration is the inner loop of every dispatch solve, so it lives here
in a form numba can compile. The same source doubles as the numpy fallback:
``admm_iterate_py`` is always the plain-Python function and ``admm_iterate`` is
whichever variant ``SHIFTSITE_NO_NUMBA`` selects.
"""

from __future__ import annotations

import numpy as np

from shiftsite._accel import jit, maybe_jit

RUNNING = 0
SOLVED = 1
PRIMAL_INFEASIBLE = 2
DUAL_INFEASIBLE = 3


def _admm_iterate(
    Kinv, P, A, At, q, l, u, rho, sigma, alpha,
    D, E, c,
    x, z, y,
    max_iter, check_every,
    eps_abs, eps_rel, eps_pinf, eps_dinf,
):
    """Run at most ``max_iter`` scaled ADMM steps, updating x, z, y in place.

    Residuals and certificates are evaluated on the unscaled problem every
    ``check_every`` steps. Returns ``(status, iters, r_prim, r_dual,
    prim_scale, dual_scale)``.
    """
    m = z.shape[0]
    Dinv = 1.0 / D
    Einv = 1.0 / E
    status = RUNNING
    r_prim = np.inf
    r_dual = np.inf
    prim_scale = 1.0
    dual_scale = 1.0
    it = 0
    while it < max_iter:
        x_prev = x.copy()
        y_prev = y.copy()
        rhs = sigma * x - q + At @ (rho * z - y)
        xt = Kinv @ rhs
        zt = A @ xt
        xn = alpha * xt + (1.0 - alpha) * x
        zrel = alpha * zt + (1.0 - alpha) * z
        zn = np.minimum(np.maximum(zrel + y / rho, l), u)
        y[:] = y + rho * (zrel - zn)
        x[:] = xn
        z[:] = zn
        it += 1
        if it % check_every != 0 and it != max_iter:
            continue

        Ax = A @ x
        Px = P @ x
        Aty = At @ y
        r_prim = np.abs(Einv * (Ax - z)).max()
        r_dual = np.abs(Dinv * (Px + q + Aty)).max() / c
        prim_scale = max(np.abs(Einv * Ax).max(), np.abs(Einv * z).max())
        dual_scale = max(
            np.abs(Dinv * Px).max(), max(np.abs(Dinv * Aty).max(), np.abs(Dinv * q).max())
        ) / c
        if r_prim <= eps_abs + eps_rel * prim_scale and r_dual <= eps_abs + eps_rel * dual_scale:
            status = SOLVED
            break

        # primal infeasibility certificate from the last dual increment
        dy = y - y_prev
        norm_dy = np.abs(E * dy).max()
        if norm_dy > 1e-12:
            Atdy = At @ dy
            support = 0.0
            valid = True
            for i in range(m):
                if dy[i] > 0.0:
                    if u[i] >= 1e19:
                        if E[i] * dy[i] > eps_pinf * norm_dy:
                            valid = False
                            break
                    else:
                        support += u[i] * dy[i]
                elif dy[i] < 0.0:
                    if l[i] <= -1e19:
                        if -E[i] * dy[i] > eps_pinf * norm_dy:
                            valid = False
                            break
                    else:
                        support += l[i] * dy[i]
            if valid and np.abs(Dinv * Atdy).max() <= eps_pinf * norm_dy and support < -eps_pinf * norm_dy:
                status = PRIMAL_INFEASIBLE
                break

        # dual infeasibility (unbounded objective) certificate
        dx = x - x_prev
        norm_dx = np.abs(D * dx).max()
        if norm_dx > 1e-12:
            Pdx = P @ dx
            Adx = A @ dx
            if np.abs(Dinv * Pdx).max() <= eps_dinf * norm_dx and q @ dx < -eps_dinf * norm_dx:
                ok = True
                for i in range(m):
                    v = Einv[i] * Adx[i]
                    if u[i] < 1e19 and v > eps_dinf * norm_dx:
                        ok = False
                        break
                    if l[i] > -1e19 and v < -eps_dinf * norm_dx:
                        ok = False
                        break
                if ok:
                    status = DUAL_INFEASIBLE
                    break
    return status, it, r_prim, r_dual, prim_scale, dual_scale


admm_iterate_py = _admm_iterate
admm_iterate_jit = jit(_admm_iterate)
admm_iterate = maybe_jit(_admm_iterate)
