"""Static network model and the DC mapping matrices of the balance equations.

Conventions
-----------
* Buses are 0-indexed. A line ``(i, j)`` carries positive flow from ``i`` to ``j``.
* The fundamental flow vector ``f`` holds the voltage angles of the non-slack
  buses scaled by the base power (``f = S_base * theta``), so line flows come
  out in MW as ``K_flow @ f`` with ``K_flow`` built from per-unit susceptances.
* ``C_inj @ f`` is the net power delivered *into* each bus by the network; it
  sits on the generation side of the balance equation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from shiftsite.errors import (
    DisconnectedGraph,
    InvalidIndex,
    NonPositiveParameter,
    SingularNetwork,
    ValidationError,
)


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Network:
    name: str
    n_buses: int
    bus_names: tuple[str, ...]
    slack_bus: int
    hub_bus: int
    base_mva: float
    line_from: np.ndarray
    line_to: np.ndarray
    susceptance: np.ndarray
    flow_limit: np.ndarray
    gen_bus: np.ndarray
    gen_pmax: np.ndarray
    emission_a: np.ndarray
    emission_b: np.ndarray
    gen_cost: np.ndarray
    res_bus: np.ndarray
    res_names: tuple[str, ...]
    emission_r: np.ndarray
    ctrl_buses: np.ndarray
    shift_c: np.ndarray
    shift_d: np.ndarray
    load_weights: np.ndarray = field(default=None)

    @property
    def n_lines(self) -> int:
        return int(self.line_from.shape[0])

    @property
    def n_gens(self) -> int:
        return int(self.gen_bus.shape[0])

    @property
    def n_res(self) -> int:
        return int(self.res_bus.shape[0])

    @property
    def n_ctrl(self) -> int:
        return int(self.ctrl_buses.shape[0])

    def bus_index(self, name: str) -> int:
        try:
            return self.bus_names.index(str(name))
        except ValueError:
            raise InvalidIndex(f"unknown bus {name!r}") from None

    def to_dict(self) -> dict[str, Any]:
        """Inverse of :func:`build_network`."""
        return {
            "name": self.name,
            "base_mva": self.base_mva,
            "slack_bus": self.slack_bus,
            "hub_bus": self.hub_bus,
            "buses": [
                {"name": nm, "load_weight": float(w)}
                for nm, w in zip(self.bus_names, self.load_weights)
            ],
            "lines": [
                {"from": int(i), "to": int(j), "susceptance": float(b), "limit": float(f)}
                for i, j, b, f in zip(self.line_from, self.line_to, self.susceptance, self.flow_limit)
            ],
            "generators": [
                {"bus": int(b), "p_max": float(p), "emission_a": float(a), "emission_b": float(e), "cost": float(w)}
                for b, p, a, e, w in zip(self.gen_bus, self.gen_pmax, self.emission_a, self.emission_b, self.gen_cost)
            ],
            "renewables": [
                {"name": nm, "bus": int(b), "emission_r": float(r)}
                for nm, b, r in zip(self.res_names, self.res_bus, self.emission_r)
            ],
            "ctrl_loads": [int(b) for b in self.ctrl_buses],
            "coeffs": {"shift_c": self.shift_c.tolist(), "shift_d": self.shift_d.tolist()},
        }


@dataclass(frozen=True, eq=False)
class GridMatrices:
    A_gen: np.ndarray
    A_res: np.ndarray
    A_ctrl: np.ndarray
    C_inj: np.ndarray
    K_flow: np.ndarray
    M_shift: np.ndarray


def _bus_ref(value, n: int, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise InvalidIndex(f"bus reference must be an integer, got {value!r}", where)
    if not 0 <= int(value) < n:
        raise InvalidIndex(f"bus {value} outside 0..{n - 1}", where)
    return int(value)


def _per_bus(value, n: int, where: str, default: float) -> np.ndarray:
    if value is None:
        return np.full(n, default, dtype=float)
    if np.isscalar(value):
        return np.full(n, float(value))
    arr = np.asarray(value, dtype=float)
    if arr.shape != (n,):
        raise ValidationError(f"expected {n} per-bus values, got shape {arr.shape}", where)
    return arr


def build_network(spec: dict[str, Any]) -> Network:
    """Validate a network description (the JSON schema of the network file).

    Raises :class:`InvalidIndex`, :class:`NonPositiveParameter` or
    :class:`DisconnectedGraph` with the offending field path.
    """
    buses = spec.get("buses")
    if isinstance(buses, int):
        names = [str(i) for i in range(buses)]
        weights = [1.0] * buses
    elif isinstance(buses, list) and buses:
        names = [str(b.get("name", i)) if isinstance(b, dict) else str(b) for i, b in enumerate(buses)]
        weights = [float(b.get("load_weight", 1.0)) if isinstance(b, dict) else 1.0 for b in buses]
    else:
        raise ValidationError("at least one bus is required", "buses")
    n = len(names)
    if len(set(names)) != n:
        raise ValidationError("bus names must be unique", "buses")
    if any(w < 0 for w in weights):
        raise NonPositiveParameter("load weights must be non-negative", "buses")

    lines = spec.get("lines", [])
    lf, lt, sus, lim = [], [], [], []
    for k, ln in enumerate(lines):
        where = f"lines[{k}]"
        i = _bus_ref(ln.get("from"), n, where + ".from")
        j = _bus_ref(ln.get("to"), n, where + ".to")
        if i == j:
            raise InvalidIndex("line endpoints must differ", where)
        if "susceptance" in ln:
            b = float(ln["susceptance"])
        elif "reactance" in ln:
            x = float(ln["reactance"])
            if x <= 0:
                raise NonPositiveParameter("reactance must be > 0", where + ".reactance")
            b = 1.0 / x
        else:
            raise ValidationError("line needs susceptance or reactance", where)
        if b <= 0:
            raise NonPositiveParameter("susceptance must be > 0", where + ".susceptance")
        f = float(ln.get("limit", np.inf))
        if f <= 0:
            raise NonPositiveParameter("flow limit must be > 0", where + ".limit")
        lf.append(i)
        lt.append(j)
        sus.append(b)
        lim.append(f)

    gens = spec.get("generators", [])
    gb, gp, ga, ge, gw = [], [], [], [], []
    for k, g in enumerate(gens):
        where = f"generators[{k}]"
        gb.append(_bus_ref(g.get("bus"), n, where + ".bus"))
        p = float(g.get("p_max", 0.0))
        if p < 0:
            raise NonPositiveParameter("p_max must be >= 0", where + ".p_max")
        a = float(g.get("emission_a", 0.0))
        if a < 0:
            raise NonPositiveParameter("emission_a must be >= 0 (convex emission curve)", where + ".emission_a")
        gp.append(p)
        ga.append(a)
        ge.append(float(g.get("emission_b", 0.0)))
        gw.append(float(g.get("cost", 0.0)))

    res = spec.get("renewables", [])
    rb, rn, rr = [], [], []
    for k, r in enumerate(res):
        where = f"renewables[{k}]"
        rb.append(_bus_ref(r.get("bus"), n, where + ".bus"))
        rn.append(str(r.get("name", k)))
        rr.append(float(r.get("emission_r", 0.0)))
    if len(set(rn)) != len(rn):
        raise ValidationError("renewable names must be unique", "renewables")

    ctrl = [_bus_ref(b, n, f"ctrl_loads[{k}]") for k, b in enumerate(spec.get("ctrl_loads", []))]
    if len(set(ctrl)) != len(ctrl):
        raise ValidationError("controllable-load buses must be distinct", "ctrl_loads")

    coeffs = spec.get("coeffs", {}) or {}
    shift_c = _per_bus(coeffs.get("shift_c"), n, "coeffs.shift_c", 0.0)
    shift_d = _per_bus(coeffs.get("shift_d"), n, "coeffs.shift_d", 0.0)
    if np.any(shift_c < 0):
        raise NonPositiveParameter("shift_c must be >= 0", "coeffs.shift_c")

    slack = _bus_ref(spec.get("slack_bus", 0), n, "slack_bus")
    hub = _bus_ref(spec.get("hub_bus", slack), n, "hub_bus")
    base = float(spec.get("base_mva", 100.0))
    if base <= 0:
        raise NonPositiveParameter("base_mva must be > 0", "base_mva")

    if n > 1:
        adj = coo_matrix((np.ones(len(lf)), (lf, lt)), shape=(n, n))
        n_comp, _ = connected_components(adj, directed=False)
        if n_comp != 1:
            raise DisconnectedGraph(f"network has {n_comp} islands", "lines")

    return Network(
        name=str(spec.get("name", "network")),
        n_buses=n,
        bus_names=tuple(names),
        slack_bus=slack,
        hub_bus=hub,
        base_mva=base,
        line_from=_frozen(lf, int),
        line_to=_frozen(lt, int),
        susceptance=_frozen(sus),
        flow_limit=_frozen(lim),
        gen_bus=_frozen(gb, int),
        gen_pmax=_frozen(gp),
        emission_a=_frozen(ga),
        emission_b=_frozen(ge),
        gen_cost=_frozen(gw),
        res_bus=_frozen(rb, int),
        res_names=tuple(rn),
        emission_r=_frozen(rr),
        ctrl_buses=_frozen(ctrl, int),
        shift_c=_frozen(shift_c),
        shift_d=_frozen(shift_d),
        load_weights=_frozen(weights),
    )


def load_network(path: str | Path) -> Network:
    """Read a network file. ``bundled:<name>`` selects a packaged case."""
    path = str(path)
    if path.startswith("bundled:"):
        return bundled_network(path.split(":", 1)[1])
    with open(path) as fh:
        return build_network(json.load(fh))


def bundled_network(name: str) -> Network:
    ref = resources.files("shiftsite") / "data" / "networks" / f"{name}.json"
    if not ref.is_file():
        raise ValidationError(f"no bundled network named {name!r}", "network")
    return build_network(json.loads(ref.read_text()))


def placement(buses: np.ndarray, n: int) -> np.ndarray:
    """n x k 0/1 matrix with a single 1 per column at row ``buses[k]``."""
    out = np.zeros((n, len(buses)))
    out[np.asarray(buses, dtype=int), np.arange(len(buses))] = 1.0
    return out


def incidence(net: Network) -> np.ndarray:
    """m x n branch-bus incidence: +1 at the from bus, -1 at the to bus."""
    m = net.n_lines
    inc = np.zeros((m, net.n_buses))
    inc[np.arange(m), net.line_from] = 1.0
    inc[np.arange(m), net.line_to] = -1.0
    return inc


def _non_slack(net: Network) -> np.ndarray:
    return np.array([i for i in range(net.n_buses) if i != net.slack_bus], dtype=int)


def flow_matrices(net: Network) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(C_inj, K_flow)`` for the angle-based fundamental flows."""
    inc = incidence(net)
    keep = _non_slack(net)
    k_full = net.susceptance[:, None] * inc
    b_bus = inc.T @ k_full
    reduced = b_bus[np.ix_(keep, keep)]
    if keep.size and np.linalg.matrix_rank(reduced) < keep.size:
        raise SingularNetwork("reduced susceptance matrix is singular", "lines")
    C = -b_bus[:, keep]
    K = k_full[:, keep]
    return C, K


def shift_basis(net: Network) -> np.ndarray:
    """Star basis about the hub bus: column per non-hub bus, +1 there, -1 at the hub."""
    n = net.n_buses
    others = [i for i in range(n) if i != net.hub_bus]
    M = np.zeros((n, len(others)))
    for col, i in enumerate(others):
        M[i, col] = 1.0
        M[net.hub_bus, col] = -1.0
    return M


def grid_matrices(net: Network) -> GridMatrices:
    C, K = flow_matrices(net)
    return GridMatrices(
        A_gen=placement(net.gen_bus, net.n_buses),
        A_res=placement(net.res_bus, net.n_buses),
        A_ctrl=placement(net.ctrl_buses, net.n_buses),
        C_inj=C,
        K_flow=K,
        M_shift=shift_basis(net),
    )
