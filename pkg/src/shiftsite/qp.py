"""Convex QP solver: operator splitting (ADMM) with solution polishing.

Solves

    minimize    0.5 x'Px + q'x
    subject to  l <= Ax <= u

and reports one of ``optimal``, ``infeasible`` (certified), ``unbounded``
(certified) or ``failure``. The iteration follows the OSQP scheme: Ruiz
equilibration, per-row step sizes (stiffer on equality rows), adaptive step
size, infeasibility certificates from successive iterate differences, and a
final active-set polish that solves the reduced KKT system exactly.

A :class:`QPWorkspace` holds the scaled ``P``, ``q``, ``A`` and a cache of KKT
factorizations so that problems sharing the matrices but differing in bounds
(all timesteps of a dispatch model) reuse the same factorization.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from shiftsite import kernels
from shiftsite._accel import USE_NUMBA

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
FAILURE = "failure"

_RHO_MIN = 1e-6
_RHO_MAX = 1e6
_RHO_EQ_FACTOR = 1e3


@dataclass(frozen=True)
class QPSettings:
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_abs: float = 1e-7
    eps_rel: float = 1e-7
    eps_pinf: float = 1e-6
    eps_dinf: float = 1e-6
    max_iter: int = 20000
    check_every: int = 5
    adapt_interval: int = 25
    scaling_iter: int = 15
    polish: bool = True
    polish_refine: int = 8
    kkt_tol: float = 1e-7
    dense_limit: int = 3000

    def tightened(self) -> QPSettings:
        """Settings for the single retry after a numerical failure."""
        return QPSettings(
            rho=self.rho,
            sigma=self.sigma,
            alpha=1.0,
            eps_abs=self.eps_abs * 1e-2,
            eps_rel=self.eps_rel * 1e-2,
            eps_pinf=self.eps_pinf,
            eps_dinf=self.eps_dinf,
            max_iter=self.max_iter * 5,
            check_every=self.check_every,
            adapt_interval=self.adapt_interval,
            scaling_iter=self.scaling_iter,
            polish=True,
            polish_refine=self.polish_refine * 2,
            kkt_tol=self.kkt_tol,
            dense_limit=self.dense_limit,
        )


@dataclass
class QPResult:
    status: str
    x: np.ndarray | None
    y: np.ndarray | None
    objective: float
    iterations: int
    prim_res: float
    dual_res: float
    polished: bool = False

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _SparseFactor:
    """Wraps a sparse LU so that ``factor @ rhs`` solves the KKT system."""

    def __init__(self, K):
        self._lu = spla.splu(sp.csc_matrix(K))

    def __matmul__(self, rhs):
        return self._lu.solve(rhs)


def _as_float_bounds(v, m):
    out = np.asarray(v, dtype=float).reshape(-1)
    if out.shape[0] != m:
        raise ValueError(f"bound vector has length {out.shape[0]}, expected {m}")
    return out


class QPWorkspace:
    """Scaled problem data plus a factorization cache for fixed ``P, q, A``."""

    def __init__(self, P, q, A, settings: QPSettings | None = None):
        self.settings = settings or QPSettings()
        self.n = int(np.asarray(q).shape[0])
        self.m = int(A.shape[0])
        self.sparse = self.n > self.settings.dense_limit
        if self.sparse:
            self.P = sp.csc_matrix(P, dtype=float)
            self.A = sp.csc_matrix(A, dtype=float)
        else:
            self.P = np.asarray(P.toarray() if sp.issparse(P) else P, dtype=float)
            self.A = np.asarray(A.toarray() if sp.issparse(A) else A, dtype=float)
        self.q = np.asarray(q, dtype=float).copy()
        if self.P.shape != (self.n, self.n):
            raise ValueError("P must be n x n")
        if self.A.shape[1] != self.n:
            raise ValueError("A must have n columns")
        if self.n == 0 or self.m == 0:
            raise ValueError("need at least one variable and one constraint row")
        self._scale()
        self._factors: dict[bytes, object] = {}
        self._lock = threading.Lock()

    # -- scaling -----------------------------------------------------------
    def _scale(self):
        n, m = self.n, self.m
        D = np.ones(n)
        E = np.ones(m)
        P = self.P.copy()
        A = self.A.copy()
        for _ in range(self.settings.scaling_iter):
            if self.sparse:
                colP = np.asarray(abs(P).max(axis=0).todense()).ravel() if P.nnz else np.zeros(n)
                colA = np.asarray(abs(A).max(axis=0).todense()).ravel() if A.nnz else np.zeros(n)
                rowA = np.asarray(abs(A).max(axis=1).todense()).ravel() if A.nnz else np.zeros(m)
            else:
                colP = np.abs(P).max(axis=0) if n else np.zeros(0)
                colA = np.abs(A).max(axis=0) if m else np.zeros(n)
                rowA = np.abs(A).max(axis=1) if m else np.zeros(0)
            col = np.maximum(colP, colA)
            col[col < 1e-4] = 1.0
            rowA = rowA.copy()
            rowA[rowA < 1e-4] = 1.0
            d = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
            e = 1.0 / np.sqrt(np.clip(rowA, 1e-4, 1e4))
            if self.sparse:
                Dd = sp.diags(d)
                P = sp.csc_matrix(Dd @ P @ Dd)
                A = sp.csc_matrix(sp.diags(e) @ A @ Dd)
            else:
                P = d[:, None] * P * d[None, :]
                A = e[:, None] * A * d[None, :]
            D *= d
            E *= e
        qs = D * self.q
        if self.sparse:
            pcol = np.asarray(abs(P).max(axis=0).todense()).ravel() if P.nnz else np.zeros(n)
        else:
            pcol = np.abs(P).max(axis=0) if n else np.zeros(0)
        mean_col = float(pcol.mean()) if n else 0.0
        qnorm = float(np.max(np.abs(qs))) if n else 0.0
        cscale = max(mean_col, qnorm)
        cscale = 1.0 if cscale < 1e-4 else cscale
        c = 1.0 / min(cscale, 1e4)
        self.D, self.E, self.c = D, E, c
        self.Ps = P * c
        self.qs = qs * c
        self.As = A
        self.Ats = sp.csc_matrix(A.T) if self.sparse else np.ascontiguousarray(A.T)
        if not self.sparse:
            self.Ps = np.ascontiguousarray(self.Ps)
            self.As = np.ascontiguousarray(self.As)

    # -- factorization -----------------------------------------------------
    def _factor(self, rho_vec: np.ndarray):
        key = rho_vec.tobytes()
        with self._lock:
            cached = self._factors.get(key)
        if cached is not None:
            return cached
        sigma = self.settings.sigma
        if self.sparse:
            K = self.Ps + sigma * sp.identity(self.n, format="csc") + self.Ats @ sp.diags(rho_vec) @ self.As
            fac = _SparseFactor(K)
        else:
            K = self.Ps + sigma * np.eye(self.n) + (self.Ats * rho_vec[None, :]) @ self.As
            K = 0.5 * (K + K.T)
            cf = sla.cho_factor(K, lower=True, check_finite=False)
            fac = np.ascontiguousarray(sla.cho_solve(cf, np.eye(self.n), check_finite=False))
        with self._lock:
            if len(self._factors) > 256:
                self._factors.clear()
            self._factors[key] = fac
        return fac

    def _rho_vector(self, rho: float, ls: np.ndarray, us: np.ndarray) -> np.ndarray:
        r = np.full(self.m, rho)
        eq = np.abs(us - ls) < 1e-10 * np.maximum(1.0, np.abs(us))
        free = np.isinf(ls) & np.isinf(us)
        r[eq] = _RHO_EQ_FACTOR * rho
        r[free] = _RHO_MIN
        return r

    # -- solve -------------------------------------------------------------
    def solve(self, l, u, settings: QPSettings | None = None) -> QPResult:
        st = settings or self.settings
        l = _as_float_bounds(l, self.m)
        u = _as_float_bounds(u, self.m)
        if np.any(l > u + 1e-12 * np.maximum(1.0, np.abs(u))):
            return QPResult(INFEASIBLE, None, None, np.inf, 0, np.inf, np.inf)
        ls = self.E * l
        us = self.E * u
        x = np.zeros(self.n)
        z = np.clip(np.zeros(self.m), ls, us)
        y = np.zeros(self.m)
        rho = st.rho
        iterate = kernels.admm_iterate if (USE_NUMBA and not self.sparse) else kernels.admm_iterate_py
        total = 0
        status = kernels.RUNNING
        r_prim = r_dual = np.inf
        bounded = ~(np.isinf(ls) & np.isinf(us))
        last_guess = None
        tried: set[bytes] = set()
        while total < st.max_iter:
            rho_vec = self._rho_vector(rho, ls, us)
            fac = self._factor(rho_vec)
            chunk = min(st.adapt_interval, st.max_iter - total)
            status, it, r_prim, r_dual, pscale, dscale = iterate(
                fac, self.Ps, self.As, self.Ats, self.qs, ls, us, rho_vec,
                st.sigma, st.alpha, self.D, self.E, self.c,
                x, z, y, chunk, st.check_every,
                st.eps_abs, st.eps_rel, st.eps_pinf, st.eps_dinf,
            )
            total += it
            if status != kernels.RUNNING:
                break
            if st.polish:
                # early crossover: on degenerate problems the active set settles
                # long before the splitting iterates reach tolerance, so try an
                # unrepaired polish once the guess is stable across two chunks
                xu, yu = self.D * x, self.E * y / self.c
                guess = self._active_guess(xu, yu, l, u)
                key = guess[0].tobytes() + guess[1].tobytes()
                if key == last_guess and key not in tried:
                    tried.add(key)
                    early = self._verified_polish(xu, yu, l, u, total, st)
                    if early is not None:
                        return early
                last_guess = key
            rho = self._adapt_rho(rho, x, z, y, bounded)

        if status == kernels.PRIMAL_INFEASIBLE:
            return QPResult(INFEASIBLE, None, None, np.inf, total, r_prim, r_dual)
        if status == kernels.DUAL_INFEASIBLE:
            return QPResult(UNBOUNDED, None, None, -np.inf, total, r_prim, r_dual)

        x_u = self.D * x
        y_u = self.E * y / self.c
        res = self._finish(x_u, y_u, l, u, total, st, admm_solved=status == kernels.SOLVED)
        return res

    def _adapt_rho(self, rho, x, z, y, bounded):
        """Balance the scaled primal and dual residuals, ignoring free rows."""
        Ax = self.As @ x
        Px = self.Ps @ x
        Aty = self.Ats @ y
        if not bounded.any():
            return rho
        num = np.abs(Ax - z)[bounded].max() / max(np.abs(Ax)[bounded].max(), np.abs(z)[bounded].max(), 1e-12)
        den = np.abs(Px + self.qs + Aty).max() / max(
            np.abs(Px).max(), np.abs(Aty).max(), np.abs(self.qs).max(), 1e-12
        )
        if num <= 0 or den <= 0:
            return rho
        new_rho = float(np.clip(rho * np.sqrt(num / den), _RHO_MIN, _RHO_MAX))
        if new_rho > 5.0 * rho or new_rho < 0.2 * rho:
            # snap to a power-of-two grid so the factorization cache stays small
            return float(2.0 ** np.round(np.log2(new_rho)))
        return rho

    # -- polishing and verification ------------------------------------------
    def _verified_polish(self, x, y, l, u, iters, st):
        pol = self._polish(x, y, l, u, st, rounds=3, release=False)
        if pol is None:
            return None
        xp, yp = pol
        r_prim, r_dual, pscale, dscale = self.residuals(xp, yp, l, u)
        if r_prim <= st.kkt_tol * pscale and r_dual <= st.kkt_tol * dscale:
            return QPResult(OPTIMAL, xp, yp, self._objective(xp), iters, r_prim, r_dual, True)
        return None

    def _unscaled(self):
        D, E, c = self.D, self.E, self.c
        Dinv = 1.0 / D
        Einv = 1.0 / E
        if self.sparse:
            P = sp.diags(Dinv) @ self.Ps @ sp.diags(Dinv) / c
            A = sp.diags(Einv) @ self.As @ sp.diags(Dinv)
        else:
            P = Dinv[:, None] * self.Ps * Dinv[None, :] / c
            A = Einv[:, None] * self.As * Dinv[None, :]
        return P, self.q, A

    def residuals(self, x, y, l, u):
        """Unscaled primal residual, dual residual and their scales."""
        P, q, A = self._orig
        Ax = A @ x
        Px = P @ x
        Aty = A.T @ y
        r_prim = float(np.max(np.maximum(Ax - u, 0) + np.maximum(l - Ax, 0), initial=0.0))
        r_dual = float(np.max(np.abs(Px + q + Aty), initial=0.0))
        pscale = max(float(np.max(np.abs(Ax), initial=0.0)), 1.0)
        dscale = max(
            float(np.max(np.abs(Px), initial=0.0)),
            float(np.max(np.abs(Aty), initial=0.0)),
            float(np.max(np.abs(q), initial=0.0)),
            1.0,
        )
        return r_prim, r_dual, pscale, dscale

    @property
    def _orig(self):
        if not hasattr(self, "_orig_cache"):
            self._orig_cache = self._unscaled()
        return self._orig_cache

    def _objective(self, x):
        P, q, _ = self._orig
        return float(0.5 * x @ (P @ x) + q @ x)

    def _finish(self, x, y, l, u, iters, st, admm_solved):
        polished = False
        if st.polish:
            pol = self._polish(x, y, l, u, st)
            if pol is not None:
                x, y = pol
                polished = True
        r_prim, r_dual, pscale, dscale = self.residuals(x, y, l, u)
        ok = r_prim <= st.kkt_tol * pscale and r_dual <= st.kkt_tol * dscale
        if not ok:
            return QPResult(FAILURE, x, y, self._objective(x), iters, r_prim, r_dual, polished)
        return QPResult(OPTIMAL, x, y, self._objective(x), iters, r_prim, r_dual, polished)

    def _active_guess(self, x, y, l, u):
        """Rows predicted active at their lower / upper bound, and equality rows."""
        _, _, A = self._orig
        Ax = A @ x
        eq = np.abs(u - l) <= 1e-10 * np.maximum(1.0, np.abs(u))
        upper = ~eq & ((u - Ax) < y) & np.isfinite(u)
        lower = (eq | ((Ax - l) < -y) & np.isfinite(l)) & ~upper
        return lower, upper, eq

    def _polish(self, x, y, l, u, st, rounds: int = 30, release: bool = True):
        """Guess the active set from ADMM duals and solve the equality-constrained QP.

        The guess is repaired for a bounded number of rounds: violated rows are
        added and, if ``release``, rows whose multiplier has the wrong sign are
        dropped.
        """
        P, q, A = self._orig
        tol = 1e-9
        scale_u = np.maximum(1.0, np.abs(u))
        lower, upper, eq = self._active_guess(x, y, l, u)
        for k in range(rounds):
            sol = self._solve_reduced(P, q, A, l, u, lower, upper, eq, st, x)
            if sol is None:
                return None
            xp, yp = sol
            Axp = A @ xp
            viol_hi = Axp - u > tol * scale_u
            viol_lo = l - Axp > tol * np.maximum(1.0, np.abs(l))
            wrong_lo = lower & ~eq & (yp > tol)
            wrong_hi = upper & (yp < -tol)
            if not (viol_hi.any() or viol_lo.any() or wrong_lo.any() or wrong_hi.any()):
                return xp, yp
            # release wrong-signed multipliers (all at once first, then one at a
            # time to avoid cycling) and add every violated row
            wrong = wrong_lo | wrong_hi
            if wrong.any() and not release:
                return None
            if wrong.any():
                if k < 3:
                    lower &= ~wrong
                    upper &= ~wrong
                else:
                    mag = np.where(wrong_lo, yp, 0.0) - np.where(wrong_hi, yp, 0.0)
                    j = int(np.argmax(mag))
                    lower[j] = False
                    upper[j] = False
            upper |= viol_hi & ~eq
            lower |= viol_lo
            lower &= ~upper
        return None

    def _solve_reduced(self, P, q, A, l, u, lower, upper, eq, st, x0=None):
        """Solve the KKT system of the equality-constrained subproblem.

        Refinement starts from ``x0`` so that directions the active rows leave
        undetermined stay near the splitting iterate instead of collapsing to
        the minimum-norm point.
        """
        act = lower | upper
        idx = np.flatnonzero(act)
        b = np.where(upper[idx], u[idx], l[idx])
        if not np.all(np.isfinite(b)):
            return None
        n = self.n
        k = idx.shape[0]
        delta = 1e-10
        if self.sparse:
            Aa = sp.csr_matrix(A)[idx]
            Kreg = sp.bmat([[P + delta * sp.identity(n), Aa.T], [Aa, -delta * sp.identity(k)]], format="csc")
            Kex = sp.bmat([[P, Aa.T], [Aa, None]], format="csr") if k else sp.csr_matrix(P)
            try:
                lu = spla.splu(Kreg)
            except RuntimeError:
                return None
            solve = lu.solve
        else:
            Aa = A[idx]
            Kex = np.zeros((n + k, n + k))
            Kex[:n, :n] = P
            Kex[:n, n:] = Aa.T
            Kex[n:, :n] = Aa
            Kreg = Kex.copy()
            Kreg[:n, :n] += delta * np.eye(n)
            Kreg[n:, n:] -= delta * np.eye(k)
            try:
                lu = sla.lu_factor(Kreg, check_finite=False)
            except (ValueError, np.linalg.LinAlgError):
                return None
            solve = lambda r: sla.lu_solve(lu, r, check_finite=False)  # noqa: E731
        rhs = np.concatenate([-q, b])
        if x0 is None:
            sol = solve(rhs)
        else:
            start = np.concatenate([x0, np.zeros(k)])
            sol = start + solve(rhs - Kex @ start)
        rscale = max(1.0, float(np.max(np.abs(rhs), initial=0.0)))
        for _ in range(st.polish_refine):
            r = rhs - Kex @ sol
            if np.max(np.abs(r), initial=0.0) <= 1e-13 * rscale:
                break
            sol = sol + solve(r)
        if not np.all(np.isfinite(sol)):
            return None
        xp = sol[:n]
        yp = np.zeros(self.m)
        yp[idx] = sol[n:]
        return xp, yp


def solve_qp(P, q, A, l, u, settings: QPSettings | None = None) -> QPResult:
    """One-shot convenience wrapper around :class:`QPWorkspace`."""
    return QPWorkspace(P, q, A, settings).solve(l, u)
