"""Exogenous time series: renewable availability, normal and controllable load.

CSV layout: the first column is a timestamp index (ISO datetimes or plain hour
offsets); the other columns are ``res_<unit>``, ``load_<bus>``, ``ctrl_<bus>``
and ``cap_<bus>`` using the names from the network file.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from shiftsite.errors import EmptyHorizon, InvalidParams, NegativeValue, ShapeMismatch
from shiftsite.grid import Network

HOURS_PER_YEAR = 8760.0


@dataclass(frozen=True, eq=False)
class Scenario:
    dt_hours: float
    res_avail: np.ndarray  # T x R
    base_load: np.ndarray  # T x n
    ctrl_load: np.ndarray  # T x d
    shift_cap: np.ndarray  # T x n, total hosting capacity per bus
    ctrl_buses: tuple[int, ...]
    timestamps: tuple[str, ...] = field(default=())

    @property
    def horizon(self) -> int:
        return int(self.base_load.shape[0])

    @property
    def n_buses(self) -> int:
        return int(self.base_load.shape[1])

    @property
    def ctrl_at_bus(self) -> np.ndarray:
        """T x n original controllable load per bus (``D s_t``)."""
        out = np.zeros((self.horizon, self.n_buses))
        if self.ctrl_buses:
            out[:, list(self.ctrl_buses)] = self.ctrl_load
        return out

    @property
    def headroom(self) -> np.ndarray:
        """T x n extra controllable load each bus can host (cap minus own load)."""
        return self.shift_cap - self.ctrl_at_bus

    def window(self, start: int, stop: int) -> Scenario:
        """Sub-horizon ``[start, stop)``."""
        ts = self.timestamps[start:stop] if self.timestamps else ()
        return replace(
            self,
            res_avail=_ro(self.res_avail[start:stop]),
            base_load=_ro(self.base_load[start:stop]),
            ctrl_load=_ro(self.ctrl_load[start:stop]),
            shift_cap=_ro(self.shift_cap[start:stop]),
            timestamps=ts,
        )


def _ro(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def make_scenario(
    net: Network,
    res_avail,
    base_load,
    ctrl_load=None,
    shift_cap=None,
    dt_hours: float = 1.0,
    expansion=0.0,
    timestamps: Sequence[str] = (),
) -> Scenario:
    """Validate arrays against ``net`` and build a :class:`Scenario`.

    When ``shift_cap`` is omitted it defaults to the original controllable load
    plus a per-bus ``expansion`` headroom.
    """
    base_load = np.atleast_2d(np.asarray(base_load, dtype=float))
    T = base_load.shape[0]
    if T == 0:
        raise EmptyHorizon("scenario has no timesteps")
    n, R, d = net.n_buses, net.n_res, net.n_ctrl
    res_avail = np.asarray(res_avail, dtype=float).reshape(T, R) if R else np.zeros((T, 0))
    ctrl_load = np.zeros((T, d)) if ctrl_load is None else np.asarray(ctrl_load, dtype=float)
    for name, arr, cols in (("base_load", base_load, n), ("res_avail", res_avail, R), ("ctrl_load", ctrl_load, d)):
        if arr.shape != (T, cols):
            raise ShapeMismatch(f"expected shape {(T, cols)}, got {arr.shape}", name)
    ctrl_at_bus = np.zeros((T, n))
    ctrl_at_bus[:, net.ctrl_buses] = ctrl_load
    if shift_cap is None:
        exp = np.broadcast_to(np.asarray(expansion, dtype=float), (n,))
        if np.any(exp < 0):
            raise NegativeValue("expansion capacity must be >= 0", "expansion")
        shift_cap = ctrl_at_bus + exp[None, :]
    shift_cap = np.asarray(shift_cap, dtype=float)
    if shift_cap.shape != (T, n):
        raise ShapeMismatch(f"expected shape {(T, n)}, got {shift_cap.shape}", "shift_cap")
    for name, arr in (("base_load", base_load), ("res_avail", res_avail), ("ctrl_load", ctrl_load), ("shift_cap", shift_cap)):
        if not np.all(np.isfinite(arr)):
            raise NegativeValue("values must be finite", name)
        if np.any(arr < 0):
            t, c = np.argwhere(arr < 0)[0]
            raise NegativeValue(f"negative value {arr[t, c]} at row {t}, column {c}", name)
    if np.any(shift_cap < ctrl_at_bus - 1e-12):
        raise ShapeMismatch("shift_cap must be at least the bus's own controllable load", "shift_cap")
    if dt_hours <= 0:
        raise InvalidParams("dt_hours must be > 0", "dt_hours")
    return Scenario(
        dt_hours=float(dt_hours),
        res_avail=_ro(res_avail),
        base_load=_ro(base_load),
        ctrl_load=_ro(ctrl_load),
        shift_cap=_ro(shift_cap),
        ctrl_buses=tuple(int(b) for b in net.ctrl_buses),
        timestamps=tuple(str(s) for s in timestamps),
    )


def scale_shift_cap(sc: Scenario, factor: float) -> Scenario:
    """Scale the expansion headroom: ``cap <- D s + factor * (cap - D s)``."""
    if factor < 0:
        raise InvalidParams("factor must be >= 0", "factor")
    if factor == 1.0:
        return sc
    base = sc.ctrl_at_bus
    return replace(sc, shift_cap=_ro(base + factor * (sc.shift_cap - base)))


# -- CSV ------------------------------------------------------------------

def _parse_index(values: list[str]) -> list[float]:
    """Hour offsets from the first row, from ISO datetimes or numbers."""
    try:
        stamps = [datetime.fromisoformat(v) for v in values]
        return [(s - stamps[0]).total_seconds() / 3600.0 for s in stamps]
    except ValueError:
        pass
    try:
        nums = [float(v) for v in values]
    except ValueError:
        raise ShapeMismatch("timestamp column must hold ISO datetimes or hour offsets", "index") from None
    return [x - nums[0] for x in nums]


def load_scenario(
    path: str | Path,
    net: Network,
    dt_hours: float | None = None,
    expansion=0.0,
) -> Scenario:
    """Read a scenario CSV. Missing ``load_``/``ctrl_`` columns default to 0."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyHorizon("scenario file is empty")
    header, body = rows[0], [r for r in rows[1:] if r]
    if not body:
        raise EmptyHorizon("scenario file has a header but no rows")
    T = len(body)
    if any(len(r) != len(header) for r in body):
        raise ShapeMismatch("ragged CSV rows", str(path))
    res_pos = {nm: k for k, nm in enumerate(net.res_names)}
    ctrl_pos = {int(b): k for k, b in enumerate(net.ctrl_buses)}
    res = np.full((T, net.n_res), np.nan)
    load = np.zeros((T, net.n_buses))
    ctrl = np.zeros((T, net.n_ctrl))
    cap = np.full((T, net.n_buses), np.nan)
    have_cap = False
    for c, col in enumerate(header[1:], start=1):
        kind, _, name = col.partition("_")
        try:
            vals = np.array([float(r[c]) for r in body])
        except ValueError:
            raise ShapeMismatch(f"non-numeric entry in column {col!r}", col) from None
        if kind == "res":
            if name not in res_pos:
                raise ShapeMismatch(f"unknown renewable unit {name!r}", col)
            res[:, res_pos[name]] = vals
        elif kind in ("load", "ctrl", "cap"):
            if name not in net.bus_names:
                raise ShapeMismatch(f"unknown bus {name!r}", col)
            b = net.bus_names.index(name)
            if kind == "load":
                load[:, b] = vals
            elif kind == "cap":
                cap[:, b] = vals
                have_cap = True
            else:
                if b not in ctrl_pos:
                    raise ShapeMismatch(f"bus {name!r} hosts no controllable load", col)
                ctrl[:, ctrl_pos[b]] = vals
        else:
            raise ShapeMismatch(f"unrecognised column {col!r}", col)
    if np.isnan(res).any():
        missing = [net.res_names[k] for k in np.flatnonzero(np.isnan(res).any(axis=0))]
        raise ShapeMismatch(f"missing availability for renewable units {missing}", "res")
    index = [r[0] for r in body]
    if dt_hours is None:
        offsets = _parse_index(index)
        steps = np.diff(offsets)
        if steps.size == 0:
            dt_hours = 1.0
        else:
            if np.any(steps <= 0) or not np.allclose(steps, steps[0]):
                raise ShapeMismatch("timestamps must be strictly increasing and evenly spaced", "index")
            dt_hours = float(steps[0])
    if have_cap:
        ctrl_at_bus = np.zeros_like(load)
        ctrl_at_bus[:, net.ctrl_buses] = ctrl
        exp = np.broadcast_to(np.asarray(expansion, dtype=float), (net.n_buses,))
        cap = np.where(np.isnan(cap), ctrl_at_bus + exp[None, :], cap)
        return make_scenario(net, res, load, ctrl, cap, dt_hours=dt_hours, timestamps=index)
    return make_scenario(net, res, load, ctrl, None, dt_hours=dt_hours, expansion=expansion, timestamps=index)


def save_scenario(sc: Scenario, net: Network, path: str | Path) -> None:
    """Write the canonical CSV form; floats use ``repr`` so values round-trip."""
    header = ["timestamp"]
    header += [f"res_{nm}" for nm in net.res_names]
    header += [f"load_{nm}" for nm in net.bus_names]
    header += [f"ctrl_{net.bus_names[b]}" for b in sc.ctrl_buses]
    header += [f"cap_{nm}" for nm in net.bus_names]
    stamps = sc.timestamps or tuple(repr(t * sc.dt_hours) for t in range(sc.horizon))
    data = np.hstack([sc.res_avail, sc.base_load, sc.ctrl_load, sc.shift_cap])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t in range(sc.horizon):
            w.writerow([stamps[t]] + [repr(float(v)) for v in data[t]])


# -- synthetic generator --------------------------------------------------

@dataclass(frozen=True)
class SynthParams:
    """Shape of a synthetic multi-year scenario.

    Peaks are MW. ``load_peak`` is the system total, split over buses by the
    network's load weights; ``ctrl_peak`` and ``res_capacity`` are per unit
    (scalar or one value per controllable-load bus / renewable unit).
    """

    horizon: int = 24
    resolution: str = "hourly"  # or "daily"
    start: str = "2011-01-01T00:00:00"
    load_peak: float = 100.0
    res_capacity: float | Sequence[float] = 20.0
    res_mean: float = 0.4
    ctrl_peak: float | Sequence[float] = 10.0
    diurnal_amp: float = 0.2
    seasonal_amp: float = 0.1
    res_diurnal_amp: float = 0.0
    res_seasonal_amp: float = 0.2
    ctrl_diurnal_amp: float = 0.1
    growth: float = 0.15
    noise: float = 0.05
    res_noise: float = 0.1
    expansion: float | Sequence[float] = 10.0

    @property
    def dt_hours(self) -> float:
        return 1.0 if self.resolution == "hourly" else 24.0

    def validate(self) -> None:
        if self.horizon <= 0:
            raise InvalidParams("horizon must be > 0", "horizon")
        if self.resolution not in ("hourly", "daily"):
            raise InvalidParams("resolution must be 'hourly' or 'daily'", "resolution")
        for name in ("load_peak", "res_mean", "diurnal_amp", "seasonal_amp", "res_diurnal_amp",
                     "res_seasonal_amp", "ctrl_diurnal_amp", "noise", "res_noise"):
            if getattr(self, name) < 0:
                raise InvalidParams("must be >= 0", name)
        for name in ("res_capacity", "ctrl_peak", "expansion"):
            if np.any(np.asarray(getattr(self, name), dtype=float) < 0):
                raise InvalidParams("must be >= 0", name)
        if self.growth <= -1:
            raise InvalidParams("growth must be > -1", "growth")
        if self.diurnal_amp > 1 or self.seasonal_amp > 1 or self.ctrl_diurnal_amp > 1:
            raise InvalidParams("shape amplitudes above 1 would produce negative loads", "amplitudes")

    @classmethod
    def from_dict(cls, d: dict) -> SynthParams:
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise InvalidParams(f"unknown generator parameters {sorted(extra)}", "synth")
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


def synth_scenario(params: SynthParams, net: Network, seed: int) -> Scenario:
    """Seeded synthetic scenario with diurnal/seasonal shape and annual growth.

    Controllable load grows by ``(1 + growth) ** year`` in whole-year steps so
    that annual means compound exactly at the configured rate.
    """
    params.validate()
    rng = np.random.Generator(np.random.PCG64(seed))
    T, dt = params.horizon, params.dt_hours
    hours = np.arange(T) * dt
    day = hours / 24.0
    hour_of_day = np.mod(hours, 24.0)
    seasonal = np.cos(2.0 * math.pi * day / 365.0)
    # daily steps report the daily peak, so the diurnal swing collapses to its maximum
    if dt >= 24.0:
        diurnal = np.ones(T)
    else:
        diurnal = np.sin(2.0 * math.pi * (hour_of_day - 8.0) / 24.0)
    year = np.floor(hours / HOURS_PER_YEAR + 1e-9)

    # draw order is fixed: load, renewables, controllable load
    eps_load = rng.standard_normal((T, net.n_buses))
    eps_res = rng.standard_normal((T, net.n_res))
    eps_ctrl = rng.standard_normal((T, net.n_ctrl))

    weights = np.asarray(net.load_weights, dtype=float)
    share = weights / weights.sum() if weights.sum() > 0 else np.zeros_like(weights)
    load_shape = 1.0 + params.seasonal_amp * seasonal + params.diurnal_amp * diurnal
    base = params.load_peak * load_shape[:, None] * share[None, :] * (1.0 + params.noise * eps_load)
    base = np.maximum(base, 0.0)

    cap_res = np.broadcast_to(np.asarray(params.res_capacity, dtype=float), (net.n_res,))
    res_shape = params.res_mean * (1.0 + params.res_seasonal_amp * seasonal + params.res_diurnal_amp * diurnal)
    cf = np.clip(res_shape[:, None] + params.res_noise * eps_res, 0.0, 1.0)
    res = cf * cap_res[None, :]

    peak_ctrl = np.broadcast_to(np.asarray(params.ctrl_peak, dtype=float), (net.n_ctrl,))
    growth = (1.0 + params.growth) ** year
    ctrl_shape = (1.0 + params.ctrl_diurnal_amp * diurnal) * growth
    ctrl = peak_ctrl[None, :] * ctrl_shape[:, None] * (1.0 + params.noise * eps_ctrl)
    ctrl = np.maximum(ctrl, 0.0)

    start = datetime.fromisoformat(params.start)
    stamps = [(start + timedelta(hours=float(h))).isoformat() for h in hours]
    exp = np.broadcast_to(np.asarray(params.expansion, dtype=float), (net.n_buses,))
    return make_scenario(net, res, base, ctrl, None, dt_hours=dt, expansion=exp, timestamps=stamps)
