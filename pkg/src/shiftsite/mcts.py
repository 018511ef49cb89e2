"""UCT search over the iterative priority tree.

Each round selects a node by UCB, expands it by one unvisited child, completes
a random rollout to a maximal location vector, evaluates that vector with the
per-timestep dispatch QPs and backs the reward up the selected path. Leaves
whose dispatch is infeasible are removed; removal cascades to parents left
without live children.

Rewards are the negated total emission. ``V`` keeps the raw sums, the UCB
exploitation term is rescaled to [0, 1] with the range of rewards seen so far.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from shiftsite.dispatch import CostCaps, evaluate_plan
from shiftsite.errors import InfeasibleLeaf, InvalidParams, NoFeasiblePlan
from shiftsite.grid import Network
from shiftsite.ipt import Budget, LocationVector, SearchTree, bits, viable_children
from shiftsite.scenario import Scenario

log = logging.getLogger(__name__)

NORMALIZATIONS = ("running-min-max", "fixed-range")


@dataclass(frozen=True)
class SearchConfig:
    """Search parameters.

    Parameters
    ----------
    rho : float
        Exploration rate of the UCB bonus.
    max_rounds : int
        Round budget.
    time_budget : float or None
        Wall-clock budget in seconds; the first round always runs.
    window : int
        Rounds the greedy path must stay unchanged to count as converged.
    seed : int
        Seed of the rollout and tie-breaking generator.
    reward_normalization : str
        ``running-min-max`` or ``fixed-range``.
    reward_range : tuple of float, optional
        ``(lo, hi)`` used by ``fixed-range``.
    """

    rho: float = math.sqrt(2.0)
    max_rounds: int = 500
    time_budget: float | None = None
    window: int = 20
    seed: int = 0
    reward_normalization: str = "running-min-max"
    reward_range: tuple[float, float] | None = None

    def __post_init__(self):
        if not (self.rho >= 0):
            raise InvalidParams("rho must be >= 0", "search.rho")
        if self.max_rounds < 1:
            raise InvalidParams("max_rounds must be >= 1", "search.max_rounds")
        if self.window < 1:
            raise InvalidParams("window must be >= 1", "search.window")
        if self.time_budget is not None and not (self.time_budget > 0):
            raise InvalidParams("time budget must be positive", "search.time_budget")
        if self.reward_normalization not in NORMALIZATIONS:
            raise InvalidParams(f"expected one of {NORMALIZATIONS}", "search.reward_normalization")
        if self.reward_normalization == "fixed-range":
            if self.reward_range is None or not self.reward_range[0] < self.reward_range[1]:
                raise InvalidParams("fixed-range needs lo < hi", "search.reward_range")

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "max_rounds": self.max_rounds,
            "time_budget": self.time_budget,
            "window": self.window,
            "seed": self.seed,
            "reward_normalization": self.reward_normalization,
            "reward_range": None if self.reward_range is None else list(self.reward_range),
        }


@dataclass(frozen=True)
class TraceRecord:
    round: int
    mask: int
    objective: float
    best: float
    infeasible_rollouts: int
    elapsed: float


@dataclass
class SearchOutcome:
    z_star: LocationVector
    best_objective: float
    rounds_used: int
    converged: bool
    stop_reason: str
    trace: list[TraceRecord]
    tree: SearchTree
    evaluations: dict[int, float] = field(default_factory=dict)
    pruned: set[int] = field(default_factory=set)
    wall_time: float = 0.0

    @property
    def best_series(self) -> np.ndarray:
        return np.array([r.best for r in self.trace])


def ucb(V_j: float, N_j: int, N_i: int, rho: float, lo: float | None = None, hi: float | None = None) -> float:
    """Upper confidence bound of child ``j`` under parent ``i``.

    With ``lo`` and ``hi`` the mean reward is mapped linearly to [0, 1] first;
    a degenerate range maps every mean to 0.5.
    """
    if N_j < 1 or N_i < 1:
        raise ValueError("ucb needs visited nodes")
    mean = V_j / N_j
    if lo is not None and hi is not None:
        mean = (mean - lo) / (hi - lo) if hi > lo else 0.5
    return mean + rho * math.sqrt(math.log(N_i) / N_j)


def backpropagate(tree: SearchTree, path: list[int], reward: float) -> None:
    """Add one visit and ``reward`` to every node on ``path``."""
    for nid in path:
        node = tree.nodes[nid]
        node.N += 1
        node.V += reward


class PruneState:
    """Dead masks, including ones never materialized in the arena."""

    def __init__(self, tree: SearchTree):
        self.tree = tree
        self.dead: set[int] = set()

    def is_dead(self, mask: int) -> bool:
        return mask in self.dead

    def live_viable(self, mask: int) -> list[int]:
        return [c for c in viable_children(mask, self.tree.budget, self.tree.oracle) if c not in self.dead]

    def prune(self, mask: int) -> None:
        """Remove ``mask`` and cascade to ancestors left without live children."""
        b = self.tree.budget
        cur = mask
        while True:
            self.dead.add(cur)
            nid = self.tree.by_mask.get(cur)
            if nid is not None:
                self.tree.nodes[nid].removed = True
            if cur == 0:
                return
            # the parent drops the highest-priority bus, which was added last
            top = b.priority[b.top_rank(cur)]
            parent = cur & ~(1 << top)
            if parent in self.dead or self.live_viable(parent):
                return
            cur = parent


def prune(tree: SearchTree, node_id: int, state: PruneState | None = None) -> PruneState:
    """Flag ``node_id`` removed and cascade upward; returns the prune state used."""
    state = state or PruneState(tree)
    state.prune(tree.nodes[node_id].mask)
    return state


def simulate(tree: SearchTree, mask: int, rng: np.random.Generator, evaluate: Callable[[int], float],
             state: PruneState | None = None) -> tuple[int, float]:
    """Uniform random rollout from ``mask`` to a maximal leaf, then evaluate it.

    Raises
    ------
    InfeasibleLeaf
        If the reached leaf has infeasible dispatch.
    """
    cur = mask
    while True:
        kids = state.live_viable(cur) if state is not None else viable_children(cur, tree.budget, tree.oracle)
        if not kids:
            break
        cur = kids[int(rng.integers(len(kids)))]
    obj = evaluate(cur)
    if not math.isfinite(obj):
        raise InfeasibleLeaf(cur)
    return cur, obj


def plan_evaluator(net: Network, sc: Scenario, caps: CostCaps | None, workers: int = 1) -> Callable[[int], float]:
    """Total emission of a location mask, ``inf`` when some step is infeasible."""
    n = net.n_buses

    def evaluate(mask: int) -> float:
        z = np.array([mask >> i & 1 for i in range(n)], dtype=float)
        return evaluate_plan(net, sc, z, caps, workers=workers, stop_on_infeasible=True).total_emission

    return evaluate


class _Normalizer:
    def __init__(self, cfg: SearchConfig):
        self.fixed = cfg.reward_normalization == "fixed-range"
        self.lo, self.hi = (cfg.reward_range if self.fixed else (math.inf, -math.inf))

    def observe(self, reward: float) -> None:
        if not self.fixed:
            self.lo = min(self.lo, reward)
            self.hi = max(self.hi, reward)


class _Search:
    def __init__(self, budget: Budget, cfg: SearchConfig, evaluate: Callable[[int], float]):
        self.cfg = cfg
        self.tree = SearchTree(budget)
        self.state = PruneState(self.tree)
        self.rng = np.random.default_rng(cfg.seed)
        self.norm = _Normalizer(cfg)
        self.cache: dict[int, float] = {}
        self._evaluate = evaluate
        self.total_leaves = _leaf_total(self.tree)

    def evaluate(self, mask: int) -> float:
        if mask not in self.cache:
            self.cache[mask] = float(self._evaluate(mask))
        return self.cache[mask]

    def live_children(self, nid: int) -> list[int]:
        return self.tree.live_children(nid)

    def select_child(self, nid: int) -> int:
        kids = self.live_children(nid)
        fresh = [c for c in kids if self.tree.nodes[c].N == 0]
        if fresh:
            return fresh[int(self.rng.integers(len(fresh)))]
        parent_n = self.tree.nodes[nid].N
        best, best_id = -math.inf, -1
        for c in kids:  # ascending ids, so ties keep the lowest id
            nd = self.tree.nodes[c]
            u = ucb(nd.V, nd.N, max(parent_n, 1), self.cfg.rho, self.norm.lo, self.norm.hi)
            if u > best:
                best, best_id = u, c
        return best_id

    def descend(self) -> list[int]:
        """Selection plus expansion; returns the root-to-node path."""
        tree = self.tree
        path = [0]
        nid = 0
        while True:
            node = tree.nodes[nid]
            if not node.expanded:
                tree.expand(nid)
                for c in node.children:
                    tree.nodes[c].removed = self.state.is_dead(tree.nodes[c].mask)
            kids = self.live_children(nid)
            if not kids:
                return path  # terminal
            fresh = [c for c in kids if tree.nodes[c].N == 0]
            if node.N <= 1 and fresh:
                # expandable: add one unvisited child and stop there
                nid = fresh[int(self.rng.integers(len(fresh)))]
                path.append(nid)
                return path
            nid = self.select_child(nid)
            path.append(nid)
            if tree.nodes[nid].N == 0:
                return path

    def round(self) -> tuple[int, float, int]:
        infeasible = 0
        while True:
            if self.tree.root.removed:
                raise NoFeasiblePlan("every candidate location vector is infeasible")
            path = self.descend()
            nid = path[-1]
            while not self.tree.nodes[nid].removed:
                try:
                    leaf, obj = simulate(self.tree, self.tree.nodes[nid].mask, self.rng, self.evaluate, self.state)
                except InfeasibleLeaf as exc:
                    infeasible += 1
                    log.debug("pruning infeasible leaf %#x", exc.mask)
                    self.state.prune(exc.mask)
                    continue
                reward = -obj
                self.norm.observe(reward)
                backpropagate(self.tree, path, reward)
                return leaf, obj, infeasible
            # the selected node itself was pruned: select again on the updated tree

    def greedy_path(self) -> tuple[tuple[int, ...], bool]:
        tree = self.tree
        nid = 0
        path = [0]
        while True:
            kids = [c for c in self.live_children(nid) if tree.nodes[c].N > 0]
            if not kids:
                node = tree.nodes[nid]
                reached = node.expanded and not self.live_children(nid)
                return tuple(path), reached
            nid = max(kids, key=lambda c: (tree.nodes[c].N, -c))
            path.append(nid)

    def exhausted(self) -> bool:
        if self.total_leaves is None:
            return False
        # only leaves are ever evaluated, so the cache size counts them
        return len(self.cache) >= self.total_leaves


def _leaf_total(tree: SearchTree) -> int | None:
    b = tree.budget
    if math.isinf(b.B) or all(a == 0 for a in b.alpha) or b.n <= 24:
        return tree.oracle.count(0)
    return None


def search(
    net: Network,
    sc: Scenario,
    budget: Budget,
    caps: CostCaps | None,
    cfg: SearchConfig | None = None,
    workers: int = 1,
    evaluate: Callable[[int], float] | None = None,
) -> SearchOutcome:
    """Run the tree search and return the best location vector found.

    ``evaluate`` overrides the dispatch-based leaf evaluation; it maps a bus
    bitmask to its total emission or ``inf`` when infeasible.
    """
    cfg = cfg or SearchConfig()
    if budget.n != net.n_buses:
        raise InvalidParams(f"budget has {budget.n} buses, network {net.n_buses}", "budget.n")
    return run_search(budget, cfg, evaluate or plan_evaluator(net, sc, caps, workers))


def run_search(budget: Budget, cfg: SearchConfig, evaluate: Callable[[int], float]) -> SearchOutcome:
    """Search loop on an abstract leaf evaluator."""
    s = _Search(budget, cfg, evaluate)
    if s.total_leaves == 0:
        raise NoFeasiblePlan("the budget admits no location vector")
    t0 = time.perf_counter()
    best_mask, best = -1, math.inf
    trace: list[TraceRecord] = []
    last_path: tuple[int, ...] | None = None
    stable = 0
    converged = False
    reason = "rounds"
    rounds = 0
    for k in range(1, cfg.max_rounds + 1):
        if k > 1 and cfg.time_budget is not None and time.perf_counter() - t0 >= cfg.time_budget:
            reason = "time"
            break
        leaf, obj, bad = s.round()
        rounds = k
        if obj < best or (obj == best and leaf < best_mask):
            best, best_mask = obj, leaf
        trace.append(TraceRecord(k, leaf, obj, best, bad, time.perf_counter() - t0))

        path, reached = s.greedy_path()
        if reached and path == last_path:
            stable += 1
        else:
            stable = 0
        last_path = path
        if s.exhausted():
            converged, reason = True, "exhausted"
            break
        if reached and stable >= cfg.window:
            converged, reason = True, "converged"
            break
    wall = time.perf_counter() - t0
    log.info("search stopped after %d rounds (%s), best %.6g", rounds, reason, best)
    z_star = LocationVector.from_z([best_mask >> i & 1 for i in range(budget.n)], budget)
    return SearchOutcome(
        z_star=z_star,
        best_objective=best,
        rounds_used=rounds,
        converged=converged,
        stop_reason=reason,
        trace=trace,
        tree=s.tree,
        evaluations=dict(s.cache),
        pruned=set(s.state.dead),
        wall_time=wall,
    )


__all__ = [
    "SearchConfig",
    "SearchOutcome",
    "TraceRecord",
    "backpropagate",
    "bits",
    "prune",
    "run_search",
    "search",
    "simulate",
    "ucb",
]
