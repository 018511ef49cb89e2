from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from shiftsite.dispatch import CostCaps, evaluate_plan, solve_dispatch_qp
from shiftsite.errors import EnumerationTooLarge, InfeasibleModel, NoFeasiblePlan, ProblemTooLarge
from shiftsite.ipt import Budget
from shiftsite.oracle import enumerate_optimal, solve_monolithic


def test_single_leaf_space(toy3):
    rep = enumerate_optimal(toy3.net, toy3.sc, Budget(3, 3), toy3.caps)
    assert rep.evaluated_count == 1 and rep.best_z.tolist() == [1, 1, 1]


def test_toy_oracle(toy3):
    rep = enumerate_optimal(toy3.net, toy3.sc, Budget(3, 2), toy3.caps, workers=3)
    assert rep.evaluated_count == 3
    objs = [o for _, o in rep.rows]
    assert rep.best_objective == min(objs)
    assert rep.best_z.tolist() == [1, 1, 0]
    d = rep.to_dict(toy3.net.bus_names)
    assert d["best_objective"] == rep.best_objective


def test_enumeration_guard(toy3):
    with pytest.raises(EnumerationTooLarge):
        enumerate_optimal(toy3.net, toy3.sc, Budget(3, 2), toy3.caps, limit=2)


def test_single_step_monolithic(toy3):
    sc = toy3.sc.window(7, 8)
    caps = CostCaps(toy3.caps.cap[7:8], 1.05, toy3.caps.baseline_cost[7:8])
    z = np.array([1.0, 0.0, 1.0])
    r = solve_dispatch_qp(toy3.net, sc, 0, z, caps)
    assert solve_monolithic(toy3.net, sc, z, caps) == pytest.approx(r.objective * sc.dt_hours, rel=1e-6)


@pytest.mark.parametrize("z", [[0, 0, 0], [1, 1, 0], [1, 1, 1]])
def test_horizon_decomposes(toy3, z):
    ev = evaluate_plan(toy3.net, toy3.sc, np.array(z, dtype=float), toy3.caps)
    mono = solve_monolithic(toy3.net, toy3.sc, z, toy3.caps)
    assert abs(ev.total_emission - mono) / abs(mono) <= 1e-5


def test_uncapped_monolithic(case6):
    z = np.array([1, 0, 1, 0, 0, 1], dtype=float)
    ev = evaluate_plan(case6.net, case6.sc, z, None)
    assert solve_monolithic(case6.net, case6.sc, z, None) == pytest.approx(ev.total_emission, rel=1e-5)


def test_infeasible_iff_some_step_infeasible(case6):
    # one cap below what several plans can reach at t = 15
    cap = case6.caps.cap.copy()
    cap[15] = 2336.0
    caps = dataclasses.replace(case6.caps, cap=cap)
    seen = set()
    for z in ([0, 0, 0, 0, 0, 0], [1, 0, 0, 1, 0, 0], [0, 0, 0, 1, 1, 0], [1, 1, 1, 1, 1, 1], [0, 0, 0, 0, 1, 1]):
        z = np.array(z, dtype=float)
        ev = evaluate_plan(case6.net, case6.sc, z, caps)
        try:
            mono = solve_monolithic(case6.net, case6.sc, z, caps)
        except InfeasibleModel:
            mono = math.inf
        assert math.isinf(mono) == (not ev.feasible)
        if ev.feasible:
            assert mono == pytest.approx(ev.total_emission, rel=1e-5)
        seen.add(ev.feasible)
    assert seen == {True, False}


def test_no_feasible_leaf(case6):
    cap = case6.caps.cap.copy()
    cap[15] = 1000.0
    caps = dataclasses.replace(case6.caps, cap=cap)
    with pytest.raises(NoFeasiblePlan):
        enumerate_optimal(case6.net, case6.sc, Budget(6, 1), caps)


def test_size_guard(ieee14):
    from shiftsite.scenario import SynthParams, synth_scenario

    sc = synth_scenario(SynthParams(horizon=3000, resolution="daily"), ieee14.net, 0)
    with pytest.raises(ProblemTooLarge):
        solve_monolithic(ieee14.net, sc, np.zeros(14), None)
