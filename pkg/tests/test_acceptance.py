"""Acceptance criteria 1-10.

Each criterion is a function returning ``(passed, detail)``. Under pytest every
criterion is one test and the terminal summary prints one PASS/FAIL line per
criterion; ``python tests/test_acceptance.py`` prints the same lines directly.
"""

from __future__ import annotations

import dataclasses
import json
import math
import sys
import tempfile
import time
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from shiftsite.config import apply_overrides, load_config
from shiftsite.dispatch import evaluate_plan, run_baseline
from shiftsite.errors import InfeasibleModel
from shiftsite.grid import bundled_network
from shiftsite.ipt import Budget, SearchTree, contains, enumerate_leaves
from shiftsite.mcts import SearchConfig, backpropagate, search
from shiftsite.metrics import metrics_from_baseline
from shiftsite.oracle import enumerate_optimal, solve_monolithic
from shiftsite.scenario import SynthParams, synth_scenario

RESULTS: dict[int, tuple[bool, str]] = {}
CONFIGS = resources.files("shiftsite") / "data" / "configs"
WORKERS = 4


def bundled(name: str):
    cfg = load_config(str(CONFIGS / f"{name}.json"))
    net = cfg.load_network()
    sc = cfg.load_scenario(net)
    return cfg, net, sc


def rel(a: float, b: float) -> float:
    return abs(a - b) / abs(b)


# -- 1 ---------------------------------------------------------------------

def criterion_1():
    rows, ok = [], True
    for name, K in (("case6", 1), ("case6", 2), ("ieee14", 2)):
        _, net, sc = bundled(name)
        caps = run_baseline(net, sc, workers=WORKERS).caps
        budget = Budget(net.n_buses, K)
        t0 = time.perf_counter()
        out = search(net, sc, budget, caps, SearchConfig(max_rounds=500), workers=WORKERS)
        t_search = time.perf_counter() - t0
        oracle = enumerate_optimal(net, sc, budget, caps, workers=WORKERS)
        err = rel(out.best_objective, oracle.best_objective)
        ok &= err <= 1e-6
        rows.append(f"{name} K={K}: rel err {err:.1e} ({out.rounds_used} rounds, {t_search:.1f}s)")
    return ok, "; ".join(rows)


# -- 2 ---------------------------------------------------------------------

def criterion_2():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for k in range(20):
        name = ("toy3", "case6")[k % 2]
        net = bundled_network(name)
        T = int(rng.integers(6, 49))
        params = SynthParams(horizon=T, load_peak=float(rng.uniform(80, 200)),
                             res_capacity=float(rng.uniform(40, 140)), res_mean=float(rng.uniform(0.3, 0.7)),
                             ctrl_peak=float(rng.uniform(4, 20)), expansion=float(rng.uniform(5, 30)))
        sc = synth_scenario(params, net, int(rng.integers(1 << 31)))
        caps = run_baseline(net, sc).caps if k % 4 < 2 else None
        z = (rng.random(net.n_buses) < 0.5).astype(float)
        decomposed = evaluate_plan(net, sc, z, caps).total_emission
        mono = solve_monolithic(net, sc, z, caps)
        worst = max(worst, rel(decomposed, mono))
    return worst <= 1e-5, f"worst relative gap {worst:.1e} over 20 pairs"


# -- 3 ---------------------------------------------------------------------

def criterion_3():
    cfg, net, sc = bundled("ieee14")
    caps = run_baseline(net, sc, workers=WORKERS).caps
    budget = cfg.make_budget(net)
    bests, ok, parts = [], True, []
    for wall in (1.0, 5.0, 30.0):
        scfg = dataclasses.replace(cfg.search, time_budget=wall, max_rounds=10**7, window=10**7)
        out = search(net, sc, budget, caps, scfg, workers=WORKERS)
        ev = evaluate_plan(net, sc, out.z_star.z.astype(float), caps)
        ok &= ev.feasible and bool(np.all(np.diff(out.best_series) <= 0))
        bests.append(out.best_objective)
        parts.append(f"{wall:g}s: {out.best_objective:.4f} ({out.rounds_used} rounds)")
    ok &= bests[0] >= bests[1] >= bests[2]
    return ok, "; ".join(parts)


# -- 4 ---------------------------------------------------------------------

def criterion_4():
    _, net, sc = bundled("case6")
    caps = run_baseline(net, sc, workers=WORKERS).caps
    rng = np.random.default_rng(4)
    worst = -math.inf
    for _ in range(50):
        z = (rng.random(6) < rng.uniform(0.1, 0.6)).astype(float)
        zz = np.maximum(z, (rng.random(6) < rng.uniform(0.1, 0.6)).astype(float))
        a = evaluate_plan(net, sc, z, caps, workers=WORKERS).total_emission
        b = evaluate_plan(net, sc, zz, caps, workers=WORKERS).total_emission
        worst = max(worst, (b - a) / abs(a))
    return worst <= 1e-6, f"max (e(z') - e(z))/|e(z)| = {worst:.1e} over 50 pairs"


# -- 5 ---------------------------------------------------------------------

def criterion_5():
    ok, counts = True, []
    for K in (1, 2, 3):
        leaves = [v.mask for v in enumerate_leaves(Budget(14, K))]
        ok &= len(leaves) == len(set(leaves)) == math.comb(14, K)
        counts.append(len(set(leaves)))
    rng = np.random.default_rng(5)
    edges = 0
    for walk in range(1000):
        K = int(rng.integers(1, 8))
        tree = SearchTree(Budget(14, K, priority=tuple(rng.permutation(14))))
        nid = 0
        while kids := tree.expand(nid):
            child = kids[int(rng.integers(len(kids)))]
            ok &= contains(tree.location(nid), tree.location(child))
            nid, edges = child, edges + 1
    return ok, f"leaves {counts}; faithfulness on 1000 walks ({edges} edges)"


# -- 6 and 7 ---------------------------------------------------------------

_IEEE14_RUN = {}


def ieee14_run():
    if not _IEEE14_RUN:
        cfg, net, sc = bundled("ieee14")
        base = run_baseline(net, sc, cfg.caps_factor, WORKERS)
        out = search(net, sc, cfg.make_budget(net), base.caps, cfg.search, workers=WORKERS)
        ev = evaluate_plan(net, sc, out.z_star.z.astype(float), base.caps, WORKERS)
        ns = evaluate_plan(net, sc, np.zeros(net.n_buses), base.caps, WORKERS)
        _IEEE14_RUN.update(base=base, out=out, ev=ev, ns=ns,
                           metrics=metrics_from_baseline(base, sc.dt_hours, ev, ns))
    return _IEEE14_RUN


def criterion_6():
    m = ieee14_run()["metrics"]
    ok = m.c_ls < m.c_opf and m.mu_redu >= 0.05
    return ok, f"C_OPF {m.c_opf:.2f}, C_LS {m.c_ls:.2f}, mu_redu {100 * m.mu_redu:.1f}%"


def criterion_7():
    run = ieee14_run()
    base = run["base"]
    worst, steps = -math.inf, 0
    for ev in (run["ev"], run["ns"]):
        for r in ev.per_t:
            if r.optimal:
                steps += 1
                worst = max(worst, r.gen_cost - (1.05 * base.caps.baseline_cost[r.t] + 1e-6))
    return worst <= 0, f"max excess over 1.05 x baseline cost {worst:.2e} $/h on {steps} steps"


# -- 8 ---------------------------------------------------------------------

def criterion_8():
    _, net, sc = bundled("case6")
    caps = run_baseline(net, sc, workers=WORKERS).caps
    # At t = 15 the line limits bind, so the cheapest dispatch depends on where load
    # may move. A cap below the baseline cost there rules out 5 of the 15 pairs.
    cap = caps.cap.copy()
    cap[15] = 2336.0
    caps = dataclasses.replace(caps, cap=cap)
    budget = Budget(6, 2)
    oracle = enumerate_optimal(net, sc, budget, caps, workers=WORKERS)
    bad = {int(sum(int(v) << i for i, v in enumerate(z))) for z, o in oracle.rows if not math.isfinite(o)}
    share = len(bad) / oracle.evaluated_count
    ok = abs(share - 0.3) <= 0.05
    details = [f"{len(bad)}/{oracle.evaluated_count} leaves infeasible"]
    for seed in range(3):
        out = search(net, sc, budget, caps, SearchConfig(seed=seed, max_rounds=500), workers=WORKERS)
        ok &= out.z_star.mask not in out.pruned and out.z_star.mask not in bad
        ok &= rel(out.best_objective, oracle.best_objective) <= 1e-6
        ok &= out.stop_reason in ("converged", "exhausted")
        details.append(f"seed {seed}: {out.stop_reason}, pruned {len(out.pruned & bad)}")
    return ok, "; ".join(details)


# -- 9 ---------------------------------------------------------------------

def criterion_9():
    from click.testing import CliRunner

    from shiftsite.cli import main

    cfg_path = str(CONFIGS / "case6.json")
    with tempfile.TemporaryDirectory() as tmp:
        outs = [Path(tmp) / d for d in ("a", "b")]
        for out in outs:
            res = CliRunner().invoke(main, ["plan", "--config", cfg_path, "--seed", "11", "--out", str(out)])
            if res.exit_code != 0:
                return False, f"plan exited {res.exit_code}: {res.output}"
        same = {name: (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
                for name in ("report.json", "trace.csv", "tree.json")}
        status = json.loads((outs[0] / "report.json").read_text())["status"]
    return all(same.values()), ", ".join(f"{k} {'identical' if v else 'DIFFERENT'}" for k, v in same.items()) + \
        f" (status {status})"


# -- 10 --------------------------------------------------------------------

def criterion_10():
    tree = SearchTree(Budget(3, 2, priority=(2, 0, 1)))
    g = next(c for c in tree.expand(0) if tree.nodes[c].mask == 0b010)
    tree.nodes[g].N, tree.nodes[g].V = 1, 20.0
    g1 = next(c for c in tree.expand(g) if tree.nodes[c].mask == 0b011)
    backpropagate(tree, tree.path_to(g1), 30.0)
    got = (tree.nodes[g1].N, tree.nodes[g1].V, tree.nodes[g].N, tree.nodes[g].V)
    return got == (1, 30.0, 2, 50.0), "N_G1={}, V_G1={:g}, N_G={}, V_G={:g}".format(*got)


CRITERIA = {
    1: ("oracle optimality", criterion_1),
    2: ("horizon decomposition", criterion_2),
    3: ("anytime contract", criterion_3),
    4: ("monotonicity", criterion_4),
    5: ("priority tree", criterion_5),
    6: ("emission reduction", criterion_6),
    7: ("cost-cap compliance", criterion_7),
    8: ("pruning soundness", criterion_8),
    9: ("determinism", criterion_9),
    10: ("UCB/backprop walk-through", criterion_10),
}


def evaluate(k: int) -> tuple[bool, str]:
    t0 = time.perf_counter()
    try:
        ok, detail = CRITERIA[k][1]()
    except InfeasibleModel as exc:
        ok, detail = False, f"unexpected infeasibility: {exc}"
    detail = f"{detail} [{time.perf_counter() - t0:.1f}s]"
    RESULTS[k] = (bool(ok), detail)
    return RESULTS[k]


def line(k: int) -> str:
    ok, detail = RESULTS[k]
    return f"{'PASS' if ok else 'FAIL'}  criterion {k:2d} ({CRITERIA[k][0]}): {detail}"


@pytest.mark.slow
@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_criterion(k):
    ok, detail = evaluate(k)
    assert ok, detail


if __name__ == "__main__":
    for k in sorted(CRITERIA):
        evaluate(k)
        print(line(k), flush=True)
    sys.exit(0 if all(ok for ok, _ in RESULTS.values()) else 1)
