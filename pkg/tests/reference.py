"""Independent dispatch model in cvxpy, written from the problem statement.

Uses explicit bus angles and bus-level shifts instead of the package's
reduced flow and shift bases, so agreement checks the assembly too.
"""

from __future__ import annotations

import math

import cvxpy as cp
import numpy as np


def reference_dispatch(net, sc, t, z=None, cap=math.inf, objective="emission"):
    n = net.n_buses
    z = np.zeros(n) if z is None else np.asarray(z, dtype=float)
    p = cp.Variable(net.n_gens)
    # a dummy unit with zero availability keeps R = 0 well formed
    cur = cp.Variable(max(net.n_res, 1))
    th = cp.Variable(n)
    s = cp.Variable(n)
    flow = cp.multiply(net.susceptance * net.base_mva, th[net.line_from] - th[net.line_to])
    own = sc.ctrl_at_bus[t]
    avail = sc.res_avail[t]
    cap_cur = np.zeros(cur.shape[0])
    cap_cur[: net.n_res] = avail
    r_cur = np.zeros(cur.shape[0])
    r_cur[: net.n_res] = net.emission_r
    inj = []
    for i in range(n):
        gen = sum(p[k] for k in np.flatnonzero(net.gen_bus == i))
        res = sum(avail[k] - cur[k] for k in np.flatnonzero(net.res_bus == i))
        out = sum(flow[k] for k in np.flatnonzero(net.line_from == i))
        inn = sum(flow[k] for k in np.flatnonzero(net.line_to == i))
        inj.append(gen + res + inn - out == sc.base_load[t, i] + own[i] + s[i])
    cons = inj + [
        th[net.slack_bus] == 0,
        cp.abs(flow) <= net.flow_limit,
        p >= 0, p <= net.gen_pmax,
        cur >= 0, cur <= cap_cur,
        cp.sum(s) == 0,
        s >= -z * own,
        s <= z * (sc.shift_cap[t] - own),
    ]
    cost = net.gen_cost @ p
    if math.isfinite(cap):
        cons.append(cost <= cap)
    if objective == "cost":
        obj = cost
    else:
        obj = (cp.sum(cp.multiply(net.emission_a, cp.square(p))) + net.emission_b @ p
               + r_cur @ cur
               + cp.sum(cp.multiply(net.shift_c, cp.square(s))) + net.shift_d @ s)
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return prob.status, prob.value, (None if p.value is None else np.array(p.value))
