"""Per-timestep dispatch: DC-OPF baseline, cost caps and the emission QP.

Decision vector of one timestep, in this order::

    x = [p_gen (G) | p_cur (R) | f (n-1) | dl (n-1)]

Constraint rows, in this order::

    balance (n)   A p_gen - A_res p_cur + C f - M dl = load + D s - A_res avail
    lines   (m)   -fbar <= K f <= fbar
    gens    (G)   0 <= p_gen <= pmax
    curtail (R)   0 <= p_cur <= avail
    shift   (n)   -z * D s <= M dl <= z * (cap - D s)
    cost    (1)   w' p_gen <= cap_t

Only the bounds depend on the timestep, the location vector and the caps, so
one :class:`QPWorkspace` per objective serves every solve of a network.
"""

from __future__ import annotations

import logging
import math
import threading
import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from shiftsite.errors import BaselineInfeasible, SolverFailure
from shiftsite.grid import GridMatrices, Network, grid_matrices
from shiftsite.qp import FAILURE, INFEASIBLE, OPTIMAL, QPSettings, QPWorkspace
from shiftsite.scenario import Scenario

log = logging.getLogger(__name__)

STATUS_OPTIMAL = "Optimal"
STATUS_INFEASIBLE = "Infeasible"

# absolute slack on the cost-cap row [$/h]; keeps a cap equal to the baseline cost
# reachable despite solver round-off, and stays below the 1e-6 compliance margin
CAP_SLACK = 1e-7


@dataclass
class DispatchResult:
    t: int
    status: str
    p_gen: np.ndarray | None = None
    p_cur: np.ndarray | None = None
    f: np.ndarray | None = None
    dl: np.ndarray | None = None
    dl_bus: np.ndarray | None = None
    emission_fuel: float = math.nan
    emission_cur: float = math.nan
    emission_shift: float = math.nan
    gen_cost: float = math.nan
    objective: float = math.nan
    prim_res: float = math.nan
    dual_res: float = math.nan

    @property
    def optimal(self) -> bool:
        return self.status == STATUS_OPTIMAL


@dataclass
class CostCaps:
    cap: np.ndarray
    factor: float
    baseline_cost: np.ndarray

    @classmethod
    def unlimited(cls, horizon: int) -> CostCaps:
        return cls(np.full(horizon, np.inf), math.inf, np.full(horizon, np.nan))


@dataclass
class Baseline:
    results: list[DispatchResult]
    caps: CostCaps

    def total_emission(self, dt_hours: float) -> float:
        return dt_hours * float(sum(r.objective for r in self.results))


@dataclass
class PlanEvaluation:
    z: np.ndarray
    per_t: list[DispatchResult]
    dt_hours: float
    feasible: bool
    total_emission: float
    total_cost: float
    total_shifted: float
    total_allowed: float
    infeasible_t: int | None = None
    emission_series: np.ndarray = field(default=None)


def emission_terms(net: Network, p_gen, p_cur, dl_bus) -> tuple[float, float, float]:
    """Fuel, curtailment and shifting emission rates [tCO2/h]."""
    p_gen = np.asarray(p_gen, dtype=float)
    p_cur = np.asarray(p_cur, dtype=float)
    dl_bus = np.asarray(dl_bus, dtype=float)
    fuel = float(np.sum(net.emission_a * p_gen**2 + net.emission_b * p_gen))
    cur = float(np.sum(net.emission_r * p_cur))
    shift = float(np.sum(net.shift_c * dl_bus**2 + net.shift_d * dl_bus))
    return fuel, cur, shift


class DispatchModel:
    """Assembled per-timestep matrices for one network.

    Thread-safe: solves only read the assembled data, and the factorization
    caches inside the workspaces are lock-protected.
    """

    def __init__(self, net: Network, settings: QPSettings | None = None):
        self.net = net
        self.settings = settings or QPSettings()
        self.mats: GridMatrices = grid_matrices(net)
        g = self.mats
        n, m, G, R = net.n_buses, net.n_lines, net.n_gens, net.n_res
        nf = n - 1
        self.sizes = (G, R, nf, nf)
        self.nvar = G + R + 2 * nf
        self.sl_gen = slice(0, G)
        self.sl_cur = slice(G, G + R)
        self.sl_f = slice(G + R, G + R + nf)
        self.sl_dl = slice(G + R + nf, G + R + 2 * nf)
        rows = n + m + G + R + n + 1
        A = np.zeros((rows, self.nvar))
        r = 0
        A[r:r + n, self.sl_gen] = g.A_gen
        A[r:r + n, self.sl_cur] = -g.A_res
        A[r:r + n, self.sl_f] = g.C_inj
        A[r:r + n, self.sl_dl] = -g.M_shift
        r += n
        self.row_line = slice(r, r + m)
        A[r:r + m, self.sl_f] = g.K_flow
        r += m
        self.row_gen = slice(r, r + G)
        A[r:r + G, self.sl_gen] = np.eye(G)
        r += G
        self.row_cur = slice(r, r + R)
        A[r:r + R, self.sl_cur] = np.eye(R)
        r += R
        self.row_shift = slice(r, r + n)
        A[r:r + n, self.sl_dl] = g.M_shift
        r += n
        self.row_cost = r
        A[r, self.sl_gen] = net.gen_cost
        self.A = A

        P = np.zeros((self.nvar, self.nvar))
        P[self.sl_gen, self.sl_gen] = np.diag(2.0 * net.emission_a)
        Md = g.M_shift
        P[self.sl_dl, self.sl_dl] = 2.0 * Md.T @ (net.shift_c[:, None] * Md)
        q = np.zeros(self.nvar)
        q[self.sl_gen] = net.emission_b
        q[self.sl_cur] = net.emission_r
        q[self.sl_dl] = Md.T @ net.shift_d
        self.P_em, self.q_em = P, q

        q_cost = np.zeros(self.nvar)
        q_cost[self.sl_gen] = net.gen_cost
        self.q_cost = q_cost

        self._ws_em = None
        self._ws_em_free = None
        self._ws_cost = None
        self._lock = threading.Lock()

    @property
    def ws_emission(self) -> QPWorkspace:
        with self._lock:
            if self._ws_em is None:
                self._ws_em = QPWorkspace(self.P_em, self.q_em, self.A, self.settings)
            return self._ws_em

    @property
    def ws_emission_free(self) -> QPWorkspace:
        """Emission workspace without the cost row, used when the cap is infinite."""
        # a row with infinite bounds still enters the equilibration and can stall ADMM
        with self._lock:
            if self._ws_em_free is None:
                self._ws_em_free = QPWorkspace(self.P_em, self.q_em, self.A[: self.row_cost], self.settings)
            return self._ws_em_free

    @property
    def ws_cost(self) -> QPWorkspace:
        with self._lock:
            if self._ws_cost is None:
                self._ws_cost = QPWorkspace(
                    np.zeros_like(self.P_em), self.q_cost, self.A[: self.row_cost], self.settings
                )
            return self._ws_cost

    def bounds(self, sc: Scenario, t: int, z=None, cap: float = math.inf) -> tuple[np.ndarray, np.ndarray]:
        net = self.net
        n = net.n_buses
        avail = sc.res_avail[t]
        own = sc.ctrl_at_bus[t]
        rhs = sc.base_load[t] + own - self.mats.A_res @ avail
        l = np.empty(self.A.shape[0])
        u = np.empty(self.A.shape[0])
        l[:n] = rhs
        u[:n] = rhs
        l[self.row_line] = -net.flow_limit
        u[self.row_line] = net.flow_limit
        l[self.row_gen] = 0.0
        u[self.row_gen] = net.gen_pmax
        l[self.row_cur] = 0.0
        u[self.row_cur] = avail
        zz = np.zeros(n) if z is None else np.asarray(z, dtype=float)
        l[self.row_shift] = -zz * own
        u[self.row_shift] = zz * (sc.shift_cap[t] - own)
        l[self.row_cost] = -np.inf
        u[self.row_cost] = cap + CAP_SLACK if math.isfinite(cap) else np.inf
        return l, u

    def _solve(self, ws: QPWorkspace, l, u, what: str):
        res = ws.solve(l, u)
        if res.status == FAILURE:
            log.debug("%s: retrying at tighter tolerance (prim %.2e dual %.2e)", what, res.prim_res, res.dual_res)
            res = ws.solve(l, u, self.settings.tightened())
        if res.status not in (OPTIMAL, INFEASIBLE):
            raise SolverFailure(
                f"{what}: solver status {res.status} after retry "
                f"(primal residual {res.prim_res:.3e}, dual residual {res.dual_res:.3e})"
            )
        return res

    def _result(self, t: int, res) -> DispatchResult:
        if res.status == INFEASIBLE:
            return DispatchResult(t=t, status=STATUS_INFEASIBLE)
        x = res.x
        p_gen = x[self.sl_gen].copy()
        p_cur = x[self.sl_cur].copy()
        dl = x[self.sl_dl].copy()
        dl_bus = self.mats.M_shift @ dl
        fuel, cur, shift = emission_terms(self.net, p_gen, p_cur, dl_bus)
        return DispatchResult(
            t=t,
            status=STATUS_OPTIMAL,
            p_gen=p_gen,
            p_cur=p_cur,
            f=x[self.sl_f].copy(),
            dl=dl,
            dl_bus=dl_bus,
            emission_fuel=fuel,
            emission_cur=cur,
            emission_shift=shift,
            gen_cost=float(self.net.gen_cost @ p_gen),
            objective=fuel + cur + shift,
            prim_res=res.prim_res,
            dual_res=res.dual_res,
        )

    def solve_opf(self, sc: Scenario, t: int) -> DispatchResult:
        l, u = self.bounds(sc, t)
        k = self.row_cost
        return self._result(t, self._solve(self.ws_cost, l[:k], u[:k], f"opf t={t}"))

    def solve_dispatch(self, sc: Scenario, t: int, z=None, cap: float = math.inf) -> DispatchResult:
        l, u = self.bounds(sc, t, z, cap)
        if not math.isfinite(cap):
            k = self.row_cost
            return self._result(t, self._solve(self.ws_emission_free, l[:k], u[:k], f"dispatch t={t}"))
        return self._result(t, self._solve(self.ws_emission, l, u, f"dispatch t={t}"))


_MODELS: "weakref.WeakKeyDictionary[Network, DispatchModel]" = weakref.WeakKeyDictionary()
_MODELS_LOCK = threading.Lock()


def dispatch_model(net: Network, settings: QPSettings | None = None) -> DispatchModel:
    """Shared :class:`DispatchModel` for ``net`` (rebuilt when settings differ)."""
    with _MODELS_LOCK:
        model = _MODELS.get(net)
        if model is None or (settings is not None and model.settings != settings):
            model = DispatchModel(net, settings)
            _MODELS[net] = model
        return model


_POOLS: dict[int, ThreadPoolExecutor] = {}
_POOLS_LOCK = threading.Lock()


def worker_pool(workers: int) -> ThreadPoolExecutor:
    """Process-wide executor of the given width, created on first use."""
    with _POOLS_LOCK:
        pool = _POOLS.get(workers)
        if pool is None:
            pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix=f"shiftsite-{workers}")
            _POOLS[workers] = pool
        return pool


def _map(fn, items, workers: int):
    # pool.map preserves input order, so reductions stay deterministic
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    return list(worker_pool(workers).map(fn, items))


def solve_opf(net: Network, sc: Scenario, t: int) -> DispatchResult:
    return dispatch_model(net).solve_opf(sc, t)


def run_baseline(net: Network, sc: Scenario, factor: float = 1.05, workers: int = 1) -> Baseline:
    """Cost-minimal dispatch without shifting for every timestep, plus caps."""
    if factor < 1.0:
        raise ValueError("cost-cap factor must be >= 1")
    model = dispatch_model(net)
    results = _map(lambda t: model.solve_opf(sc, t), list(range(sc.horizon)), workers)
    for r in results:
        if not r.optimal:
            raise BaselineInfeasible(r.t)
    cost = np.array([r.gen_cost for r in results])
    return Baseline(results, CostCaps(cap=factor * cost, factor=float(factor), baseline_cost=cost))


def compute_cost_caps(net: Network, sc: Scenario, factor: float = 1.05, workers: int = 1) -> CostCaps:
    return run_baseline(net, sc, factor, workers).caps


def solve_dispatch_qp(net: Network, sc: Scenario, t: int, z, caps: CostCaps | None) -> DispatchResult:
    cap = math.inf if caps is None else float(caps.cap[t])
    return dispatch_model(net).solve_dispatch(sc, t, z, cap)


def evaluate_plan(
    net: Network,
    sc: Scenario,
    z,
    caps: CostCaps | None,
    workers: int = 1,
    stop_on_infeasible: bool = False,
) -> PlanEvaluation:
    """Solve every timestep independently and reduce in timestep order."""
    model = dispatch_model(net)
    z = np.asarray(z, dtype=float)
    if z.shape != (net.n_buses,):
        raise ValueError(f"z must have {net.n_buses} entries")

    def one(t):
        cap = math.inf if caps is None else float(caps.cap[t])
        return model.solve_dispatch(sc, t, z, cap)

    if stop_on_infeasible and workers <= 1:
        per_t = []
        for t in range(sc.horizon):
            r = one(t)
            per_t.append(r)
            if not r.optimal:
                break
    else:
        per_t = _map(one, list(range(sc.horizon)), workers)
    return summarize_plan(z, per_t, sc)


def summarize_plan(z: np.ndarray, per_t: list[DispatchResult], sc: Scenario) -> PlanEvaluation:
    dt = sc.dt_hours
    bad = [r.t for r in per_t if not r.optimal]
    if bad or len(per_t) != sc.horizon:
        return PlanEvaluation(
            z=z, per_t=per_t, dt_hours=dt, feasible=False,
            total_emission=math.inf, total_cost=math.inf,
            total_shifted=math.nan, total_allowed=math.nan,
            infeasible_t=bad[0] if bad else None,
        )
    series = np.array([r.objective for r in per_t])
    shifted = sum(float(np.sum(np.maximum(r.dl_bus, 0.0))) for r in per_t)
    allowed = float(np.sum(sc.headroom * z[None, :]))
    return PlanEvaluation(
        z=z,
        per_t=per_t,
        dt_hours=dt,
        feasible=True,
        total_emission=dt * float(series.sum()),
        total_cost=dt * float(sum(r.gen_cost for r in per_t)),
        total_shifted=dt * shifted,
        total_allowed=dt * allowed,
        emission_series=series,
    )
