"""Iterative priority tree over location vectors.

Buses carry a strict priority order. A node may only be extended by a bus that
outranks every bus it already holds, so each subset of buses is reachable along
exactly one path and each maximal feasible subset is exactly one leaf.

Location vectors are handled internally as integer bitmasks (bit ``i`` set
means bus ``i`` is selected); :class:`LocationVector` is the public view.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from shiftsite.errors import DimensionMismatch, EnumerationTooLarge, InvalidParams

MAX_LEAVES = 10**6


def mask_of(z: Sequence[int] | np.ndarray) -> int:
    m = 0
    for i, v in enumerate(np.asarray(z).reshape(-1)):
        if v:
            m |= 1 << i
    return m


def bits(mask: int) -> list[int]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


@dataclass(frozen=True)
class LocationVector:
    """Selected buses of a candidate plan.

    ``selected`` lists the buses in the order they were added along the tree
    path, which is increasing priority.
    """

    n: int
    selected: tuple[int, ...]

    @property
    def mask(self) -> int:
        return sum(1 << i for i in self.selected)

    @property
    def z(self) -> np.ndarray:
        out = np.zeros(self.n, dtype=np.int8)
        out[list(self.selected)] = 1
        return out

    @property
    def size(self) -> int:
        return len(self.selected)

    def __len__(self) -> int:
        return len(self.selected)

    @classmethod
    def from_z(cls, z, budget: Budget | None = None) -> LocationVector:
        arr = np.asarray(z).reshape(-1)
        chosen = [int(i) for i in np.flatnonzero(arr)]
        if budget is not None:
            # path order is lowest priority first
            chosen.sort(key=lambda i: -budget.rank[i])
        return cls(int(arr.shape[0]), tuple(chosen))


@dataclass(frozen=True)
class Budget:
    """Siting limits and the bus priority order.

    Parameters
    ----------
    n : int
        Number of buses.
    K : int
        Maximum number of selected buses.
    B : float
        Maximum total investment ``alpha @ z``; ``inf`` disables the check.
    alpha : sequence of float, optional
        Per-bus investment cost, zeros by default.
    priority : sequence of int, optional
        Bus indices from highest to lowest priority. Defaults to descending bus
        index, i.e. the last bus has the highest priority.
    """

    n: int
    K: int
    B: float = math.inf
    alpha: tuple[float, ...] = ()
    priority: tuple[int, ...] = ()
    rank: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise InvalidParams("need at least one bus", "budget.n")
        if self.K < 1:
            raise InvalidParams("K must be >= 1", "budget.K")
        if not (self.B >= 0):
            raise InvalidParams("B must be >= 0", "budget.B")
        alpha = tuple(float(a) for a in self.alpha) if len(self.alpha) else (0.0,) * self.n
        if len(alpha) != self.n:
            raise InvalidParams(f"expected {self.n} entries, got {len(alpha)}", "budget.alpha")
        if any(not (a >= 0) for a in alpha):
            raise InvalidParams("investment costs must be >= 0", "budget.alpha")
        prio = tuple(int(p) for p in self.priority) if len(self.priority) else tuple(range(self.n - 1, -1, -1))
        if sorted(prio) != list(range(self.n)):
            raise InvalidParams("must be a permutation of bus indices", "budget.priority")
        rank = [0] * self.n
        for r, b in enumerate(prio):
            rank[b] = r
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "priority", prio)
        object.__setattr__(self, "rank", tuple(rank))

    def cost(self, mask: int) -> float:
        return float(sum(self.alpha[i] for i in bits(mask)))

    def admissible(self, mask: int) -> bool:
        """Cardinality and investment limits hold for ``mask``."""
        if mask.bit_count() > self.K:
            return False
        if math.isinf(self.B):
            return True
        return self.cost(mask) <= self.B + 1e-12 * max(1.0, abs(self.B))

    def top_rank(self, mask: int) -> int:
        """Rank of the highest-priority bus in ``mask``; ``n`` for the empty set."""
        if not mask:
            return self.n
        return min(self.rank[i] for i in bits(mask))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "K": self.K,
            "B": None if math.isinf(self.B) else self.B,
            "alpha": list(self.alpha),
            "priority": list(self.priority),
        }


def child_masks(mask: int, budget: Budget) -> list[int]:
    """Masks of the children of ``mask``, ordered by decreasing added-bus rank."""
    if mask.bit_count() >= budget.K:
        return []
    top = budget.top_rank(mask)
    out = []
    # ranks strictly above the current top, visited from the lowest priority upward
    for r in range(top - 1, -1, -1):
        c = mask | (1 << budget.priority[r])
        if budget.admissible(c):
            out.append(c)
    return out


def is_maximal(mask: int, budget: Budget) -> bool:
    """No single extra bus (any priority) keeps the limits satisfied."""
    if not budget.admissible(mask):
        return False
    if mask.bit_count() >= budget.K:
        return True
    for i in range(budget.n):
        if not mask >> i & 1 and budget.admissible(mask | (1 << i)):
            return False
    return True


def children(node: LocationVector, budget: Budget) -> list[LocationVector]:
    """Child location vectors of ``node`` under the priority rule."""
    if node.n != budget.n:
        raise DimensionMismatch(f"node has {node.n} buses, budget {budget.n}", "node")
    return [
        LocationVector(node.n, node.selected + (bits(c ^ node.mask)[0],))
        for c in child_masks(node.mask, budget)
    ]


def contains(ancestor, descendant) -> bool:
    """Whether ``descendant - ancestor`` is elementwise non-negative."""
    a = np.asarray(ancestor.z if isinstance(ancestor, LocationVector) else ancestor).reshape(-1)
    d = np.asarray(descendant.z if isinstance(descendant, LocationVector) else descendant).reshape(-1)
    if a.shape != d.shape:
        raise DimensionMismatch(f"lengths {a.shape[0]} and {d.shape[0]} differ", "z")
    return bool(np.all(d.astype(float) - a.astype(float) >= 0))


class LeafOracle:
    """Memoized reachability of maximal leaves below a mask.

    Under a pure cardinality limit the answer is closed-form; with an
    investment limit a depth-first search with memoization decides it.
    """

    def __init__(self, budget: Budget):
        self.budget = budget
        self._card_only = math.isinf(budget.B) or all(a == 0 for a in budget.alpha)
        self._target = min(budget.K, budget.n)
        self._reach = lru_cache(maxsize=None)(self._reach_impl)
        self._count = lru_cache(maxsize=None)(self._count_impl)

    def has_leaf(self, mask: int) -> bool:
        return self._reach(mask)

    def _reach_impl(self, mask: int) -> bool:
        b = self.budget
        if not b.admissible(mask):
            return False
        if self._card_only:
            return mask.bit_count() + b.top_rank(mask) >= self._target
        if is_maximal(mask, b):
            return True
        return any(self._reach(c) for c in child_masks(mask, b))

    def count(self, mask: int = 0) -> int:
        """Number of maximal leaves in the subtree of ``mask``."""
        return self._count(mask)

    def _count_impl(self, mask: int) -> int:
        b = self.budget
        if self._card_only:
            free = b.top_rank(mask)
            need = self._target - mask.bit_count()
            return math.comb(free, need) if need >= 0 else 0
        if is_maximal(mask, b):
            return 1
        return sum(self._count(c) for c in child_masks(mask, b))


def viable_children(mask: int, budget: Budget, oracle: LeafOracle | None = None) -> list[int]:
    """Children of ``mask`` below which at least one maximal leaf exists."""
    oracle = oracle or LeafOracle(budget)
    return [c for c in child_masks(mask, budget) if oracle.has_leaf(c)]


def count_leaves(budget: Budget) -> int:
    if budget.n > 40 and not (math.isinf(budget.B) or all(a == 0 for a in budget.alpha)):
        raise EnumerationTooLarge("general investment limits need n <= 40")
    return LeafOracle(budget).count(0)


def enumerate_leaves(budget: Budget, n: int | None = None, limit: int = MAX_LEAVES) -> Iterator[LocationVector]:
    """Yield every maximal feasible location vector exactly once.

    Leaves come out in depth-first tree order.
    """
    if n is not None and n != budget.n:
        raise DimensionMismatch(f"budget has {budget.n} buses, got {n}", "n")
    oracle = LeafOracle(budget)
    total = oracle.count(0)
    if total > limit:
        raise EnumerationTooLarge(f"{total} leaves exceed the enumeration limit {limit}")
    return _walk(LocationVector(budget.n, ()), budget, oracle)


def _walk(node: LocationVector, budget: Budget, oracle: LeafOracle) -> Iterator[LocationVector]:
    stack = [node]
    while stack:
        cur = stack.pop()
        kids = [c for c in children(cur, budget) if oracle.has_leaf(c.mask)]
        if not kids:
            if cur.selected and is_maximal(cur.mask, budget):
                yield cur
            continue
        stack.extend(reversed(kids))


# -- arena -----------------------------------------------------------------


@dataclass
class TreeNode:
    id: int
    mask: int
    parent: int | None
    top_rank: int
    children: list[int] = field(default_factory=list)
    expanded: bool = False
    N: int = 0
    V: float = 0.0
    removed: bool = False

    @property
    def highest_assigned_priority(self) -> int | None:
        return None if self.parent is None else self.top_rank


class SearchTree:
    """Append-only node arena; removal only sets a flag."""

    def __init__(self, budget: Budget):
        self.budget = budget
        self.oracle = LeafOracle(budget)
        self.nodes: list[TreeNode] = [TreeNode(0, 0, None, budget.n)]
        self.by_mask: dict[int, int] = {0: 0}

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    def __len__(self) -> int:
        return len(self.nodes)

    def location(self, node_id: int) -> LocationVector:
        node = self.nodes[node_id]
        path = []
        while node.parent is not None:
            path.append(node.mask ^ self.nodes[node.parent].mask)
            node = self.nodes[node.parent]
        return LocationVector(self.budget.n, tuple(bits(m)[0] for m in reversed(path)))

    def is_terminal(self, node_id: int) -> bool:
        return not viable_children(self.nodes[node_id].mask, self.budget, self.oracle)

    def expand(self, node_id: int) -> list[int]:
        """Create the viable children of a node once; return their ids."""
        node = self.nodes[node_id]
        if node.expanded:
            return node.children
        for c in viable_children(node.mask, self.budget, self.oracle):
            cid = len(self.nodes)
            self.nodes.append(TreeNode(cid, c, node_id, self.budget.top_rank(c)))
            self.by_mask[c] = cid
            node.children.append(cid)
        node.expanded = True
        return node.children

    def live_children(self, node_id: int) -> list[int]:
        return [c for c in self.nodes[node_id].children if not self.nodes[c].removed]

    def path_to(self, node_id: int) -> list[int]:
        out = []
        cur: int | None = node_id
        while cur is not None:
            out.append(cur)
            cur = self.nodes[cur].parent
        return out[::-1]

    def snapshot(self) -> dict:
        """Read-only export of every node's statistics."""
        n = self.budget.n
        return {
            "budget": self.budget.to_dict(),
            "nodes": [
                {
                    "id": nd.id,
                    "z": [int(nd.mask >> i & 1) for i in range(n)],
                    "parent": nd.parent,
                    "N": nd.N,
                    "V": nd.V,
                    "removed": nd.removed,
                    "children": list(nd.children),
                }
                for nd in self.nodes
            ],
        }

    def write_snapshot(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.snapshot(), fh, indent=1, sort_keys=True)
            fh.write("\n")
