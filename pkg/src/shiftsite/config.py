"""Run configuration: one JSON file plus a few documented overrides.

Schema (all keys except ``network`` and ``scenario`` are optional)::

    {
      "network": "bundled:ieee14" | "path/to/network.json",
      "scenario": {"file": "series.csv", "dt_hours": 1.0, "expansion": 25.0}
                | {"synth": {...SynthParams fields...}, "seed": 7},
      "budget": {"K": 2, "B": null, "alpha": [...], "priority": [...]},
      "caps_factor": 1.05,
      "search": {"rho": 1.414, "max_rounds": 500, "time_budget": null,
                 "window": 20, "seed": 0,
                 "reward_normalization": "running-min-max",
                 "reward_range": null},
      "workers": 1,
      "out": "runs/ieee14"
    }

Relative paths resolve against the config file's directory. ``SHIFTSITE_OUT``
and ``SHIFTSITE_WORKERS`` override ``out`` and ``workers``; command-line flags
override both.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from shiftsite.errors import InvalidParams, MissingArtifact
from shiftsite.grid import Network, load_network
from shiftsite.ipt import Budget
from shiftsite.mcts import SearchConfig
from shiftsite.scenario import Scenario, SynthParams, load_scenario, synth_scenario

ENV_OUT = "SHIFTSITE_OUT"
ENV_WORKERS = "SHIFTSITE_WORKERS"

_TOP_KEYS = {"network", "scenario", "budget", "caps_factor", "search", "workers", "out"}


@dataclass(frozen=True)
class RunConfig:
    network: str
    scenario: dict[str, Any]
    budget: dict[str, Any] = field(default_factory=lambda: {"K": 1})
    caps_factor: float = 1.05
    search: SearchConfig = field(default_factory=SearchConfig)
    workers: int = 1
    out: str = "shiftsite-out"
    base_dir: str = "."

    def resolve(self, p: str) -> str:
        if p.startswith("bundled:") or os.path.isabs(p):
            return p
        return str(Path(self.base_dir) / p)

    def load_network(self) -> Network:
        return load_network(self.resolve(self.network))

    def load_scenario(self, net: Network) -> Scenario:
        sc = self.scenario
        if "file" in sc:
            path = self.resolve(sc["file"])
            if not os.path.exists(path):
                raise MissingArtifact(f"scenario.file: {path} does not exist")
            return load_scenario(path, net, dt_hours=sc.get("dt_hours"), expansion=sc.get("expansion", 0.0))
        return synth_scenario(SynthParams.from_dict(sc["synth"]), net, int(sc.get("seed", 0)))

    def make_budget(self, net: Network) -> Budget:
        b = self.budget
        B = b.get("B")
        return Budget(
            n=net.n_buses,
            K=int(b.get("K", 1)),
            B=math.inf if B is None else float(B),
            alpha=tuple(b.get("alpha") or ()),
            priority=tuple(b.get("priority") or ()),
        )

    def echo(self) -> dict[str, Any]:
        """Effective configuration; the output location is left out so that
        identical runs written to different directories report identical bytes."""
        return {
            "network": self.network,
            "scenario": self.scenario,
            "budget": self.budget,
            "caps_factor": self.caps_factor,
            "search": self.search.to_dict(),
            "workers": self.workers,
        }

    def digest(self) -> str:
        blob = json.dumps(self.echo(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _num(d, key, where, kind=float, default=None):
    v = d.get(key, default)
    if v is None:
        return None
    try:
        return kind(v)
    except (TypeError, ValueError):
        raise InvalidParams(f"expected {kind.__name__}, got {v!r}", f"{where}.{key}") from None


def parse_config(raw: dict[str, Any], base_dir: str = ".") -> RunConfig:
    if not isinstance(raw, dict):
        raise InvalidParams("config must be a JSON object", "config")
    extra = set(raw) - _TOP_KEYS
    if extra:
        raise InvalidParams(f"unknown keys {sorted(extra)}", "config")
    if "network" not in raw or not isinstance(raw["network"], str):
        raise InvalidParams("network path or bundled:<name> required", "network")
    sc = raw.get("scenario")
    if not isinstance(sc, dict) or ("file" in sc) == ("synth" in sc):
        raise InvalidParams("give exactly one of scenario.file or scenario.synth", "scenario")
    if "synth" in sc:
        SynthParams.from_dict(sc["synth"]).validate()
    budget = dict(raw.get("budget") or {"K": 1})
    unknown = set(budget) - {"K", "B", "alpha", "priority"}
    if unknown:
        raise InvalidParams(f"unknown keys {sorted(unknown)}", "budget")
    factor = _num(raw, "caps_factor", "config", float, 1.05)
    if not factor >= 1.0:
        raise InvalidParams("cost-cap factor must be >= 1", "caps_factor")
    s = dict(raw.get("search") or {})
    unknown = set(s) - set(SearchConfig.__dataclass_fields__)
    if unknown:
        raise InvalidParams(f"unknown keys {sorted(unknown)}", "search")
    if s.get("reward_range") is not None:
        s["reward_range"] = tuple(float(v) for v in s["reward_range"])
    search = SearchConfig(**s)
    workers = _num(raw, "workers", "config", int, 1)
    if workers < 1:
        raise InvalidParams("must be >= 1", "workers")
    return RunConfig(
        network=raw["network"],
        scenario=sc,
        budget=budget,
        caps_factor=factor,
        search=search,
        workers=workers,
        out=str(raw.get("out", "shiftsite-out")),
        base_dir=base_dir,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidParams(f"invalid JSON: {exc}", str(path)) from None
    return parse_config(raw, str(path.parent))


def apply_overrides(cfg: RunConfig, *, seed=None, time_budget=None, rounds=None, out=None,
                    env: dict[str, str] | None = None) -> RunConfig:
    env = os.environ if env is None else env
    search = cfg.search
    if seed is not None:
        search = replace(search, seed=int(seed))
    if time_budget is not None:
        search = replace(search, time_budget=float(time_budget))
    if rounds is not None:
        search = replace(search, max_rounds=int(rounds))
    workers = cfg.workers
    if env.get(ENV_WORKERS):
        try:
            workers = int(env[ENV_WORKERS])
        except ValueError:
            raise InvalidParams(f"not an integer: {env[ENV_WORKERS]!r}", ENV_WORKERS) from None
        if workers < 1:
            raise InvalidParams("must be >= 1", ENV_WORKERS)
    target = out or env.get(ENV_OUT) or cfg.resolve(cfg.out)
    return replace(cfg, search=search, workers=workers, out=target)
