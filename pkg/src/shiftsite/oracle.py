"""Reference solutions for checking the search.

``enumerate_optimal`` evaluates every leaf of the priority tree. The
``solve_monolithic`` QP couples all timesteps in one problem, assembled
time-major-within-type straight from the incidence matrix rather than through
:class:`~shiftsite.dispatch.DispatchModel`, so agreement with the per-step
totals checks both the decomposition and the per-step assembly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from shiftsite.dispatch import CAP_SLACK, CostCaps, _map, evaluate_plan
from shiftsite.errors import InfeasibleModel, NoFeasiblePlan, ProblemTooLarge, SolverFailure
from shiftsite.grid import Network, incidence, placement, shift_basis
from shiftsite.ipt import MAX_LEAVES, Budget, enumerate_leaves
from shiftsite.qp import INFEASIBLE, OPTIMAL, QPSettings, QPWorkspace
from shiftsite.scenario import Scenario

log = logging.getLogger(__name__)

MAX_QP_VARS = 10**5


@dataclass
class OracleReport:
    best_z: np.ndarray
    best_objective: float
    evaluated_count: int
    rows: list[tuple[np.ndarray, float]]

    @property
    def best_mask(self) -> int:
        return int(sum(1 << i for i in np.flatnonzero(self.best_z)))

    def to_dict(self, bus_names=None) -> dict:
        def names(z):
            return [bus_names[i] if bus_names else int(i) for i in np.flatnonzero(z)]

        return {
            "best_z": [int(v) for v in self.best_z],
            "best_buses": names(self.best_z),
            "best_objective": self.best_objective,
            "evaluated_count": self.evaluated_count,
            "leaves": [
                {
                    "z": [int(v) for v in z],
                    "buses": names(z),
                    "objective": obj if math.isfinite(obj) else None,
                    "feasible": math.isfinite(obj),
                }
                for z, obj in self.rows
            ],
        }


def enumerate_optimal(
    net: Network,
    sc: Scenario,
    budget: Budget,
    caps: CostCaps | None,
    workers: int = 1,
    limit: int = MAX_LEAVES,
) -> OracleReport:
    """Evaluate every maximal leaf and return the minimum-emission one.

    Leaves are distributed over the worker pool and reduced in tree order;
    ties go to the first leaf in that order.
    """
    leaves = [lv.z.astype(float) for lv in enumerate_leaves(budget, net.n_buses, limit)]
    objs = _map(lambda z: evaluate_plan(net, sc, z, caps, workers=1).total_emission, leaves, workers)
    rows = list(zip(leaves, objs))
    feasible = [(obj, i) for i, (_, obj) in enumerate(rows) if math.isfinite(obj)]
    if not feasible:
        raise NoFeasiblePlan(f"all {len(rows)} leaves are infeasible")
    best_obj, best_i = min(feasible)
    return OracleReport(
        best_z=leaves[best_i].astype(np.int8),
        best_objective=float(best_obj),
        evaluated_count=len(rows),
        rows=[(z.astype(np.int8), float(o)) for z, o in rows],
    )


def monolithic_qp(net: Network, sc: Scenario, z, caps: CostCaps | None):
    """Assemble the horizon-coupled QP; returns ``(P, q, A, l, u)``."""
    T = sc.horizon
    n, G, R = net.n_buses, net.n_gens, net.n_res
    nf = n - 1
    nvar = T * (G + R + 2 * nf)
    if nvar > MAX_QP_VARS:
        raise ProblemTooLarge(f"monolithic QP has {nvar} variables (limit {MAX_QP_VARS})")
    z = np.asarray(z, dtype=float)
    keep = [i for i in range(n) if i != net.slack_bus]
    inc = incidence(net)
    branch = sp.diags(net.susceptance) @ sp.csr_matrix(inc[:, keep])
    bus_in = sp.csr_matrix(inc).T @ branch  # net outflow per bus
    Ag = sp.csr_matrix(placement(net.gen_bus, n))
    Ar = sp.csr_matrix(placement(net.res_bus, n))
    M = sp.csr_matrix(shift_basis(net))
    I_T = sp.identity(T, format="csr")

    def blk(mat):
        return sp.kron(I_T, mat, format="csr")

    # columns: [P (T*G) | CUR (T*R) | F (T*nf) | DL (T*nf)]
    Z = lambda r, c: sp.csr_matrix((r, c))  # noqa: E731
    balance = sp.hstack([blk(Ag), -blk(Ar), -blk(bus_in), -blk(M)])
    lines = sp.hstack([Z(T * net.n_lines, T * (G + R)), blk(branch), Z(T * net.n_lines, T * nf)])
    gens = sp.hstack([sp.identity(T * G), Z(T * G, T * (R + 2 * nf))])
    curt = sp.hstack([Z(T * R, T * G), sp.identity(T * R), Z(T * R, T * 2 * nf)])
    shift = sp.hstack([Z(T * n, T * (G + R + nf)), blk(M)])
    blocks = [balance, lines, gens, curt, shift]

    own = sc.ctrl_at_bus
    rhs = sc.base_load + own - sc.res_avail @ Ar.T.toarray()
    lo = [rhs.ravel(), np.tile(-net.flow_limit, T), np.zeros(T * G), np.zeros(T * R), (-z * own).ravel()]
    hi = [rhs.ravel(), np.tile(net.flow_limit, T), np.tile(net.gen_pmax, T), sc.res_avail.ravel(),
          (z * (sc.shift_cap - own)).ravel()]
    if caps is not None and np.any(np.isfinite(caps.cap)):
        fin = np.flatnonzero(np.isfinite(caps.cap))
        sel = sp.csr_matrix((np.ones(fin.size), (np.arange(fin.size), fin)), shape=(fin.size, T))
        cost = sp.hstack([sp.kron(sel, net.gen_cost[None, :]), Z(fin.size, T * (R + 2 * nf))])
        blocks.append(cost)
        cap = caps.cap[fin]
        lo.append(np.full(fin.size, -np.inf))
        hi.append(cap + CAP_SLACK)
    A = sp.vstack(blocks, format="csc")

    dt = sc.dt_hours
    Pg = sp.diags(np.tile(2.0 * net.emission_a, T))
    Pdl = blk(sp.csr_matrix(2.0 * M.T @ sp.diags(net.shift_c) @ M))
    P = dt * sp.block_diag([Pg, Z(T * (R + nf), T * (R + nf)), Pdl], format="csc")
    q = dt * np.concatenate([
        np.tile(net.emission_b, T),
        np.tile(net.emission_r, T),
        np.zeros(T * nf),
        np.tile(M.T @ net.shift_d, T),
    ])
    return P, q, A, np.concatenate(lo), np.concatenate(hi)


def solve_monolithic(
    net: Network,
    sc: Scenario,
    z,
    caps: CostCaps | None,
    settings: QPSettings | None = None,
) -> float:
    """Optimal total emission of the coupled horizon problem for fixed ``z``.

    Raises
    ------
    InfeasibleModel
        If the coupled problem is certified infeasible.
    """
    P, q, A, l, u = monolithic_qp(net, sc, z, caps)
    ws = QPWorkspace(P, q, A, settings or QPSettings())
    res = ws.solve(l, u)
    if res.status not in (OPTIMAL, INFEASIBLE):
        res = ws.solve(l, u, ws.settings.tightened())
    if res.status == INFEASIBLE:
        raise InfeasibleModel("monolithic problem is infeasible")
    if res.status != OPTIMAL:
        raise SolverFailure(f"monolithic solve ended with status {res.status}")
    # the constant part of the objective is zero, so this is the total emission
    return float(res.objective)
