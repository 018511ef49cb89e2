"""Command line front end.

Commands write their artifacts into the output directory:

``baseline``   baseline.csv, caps.csv, baseline.json
``plan``       the baseline files plus report.json, emissions.csv, trace.csv,
               tree.json and timing.json
``enumerate``  oracle.json
``report``     metrics.csv and convergence.csv, plus a summary on stdout
``synth``      a scenario CSV

Exit codes: 0 success, 2 infeasible model, 3 validation error or missing
input, 4 guard exceeded, 5 solver failure.
"""

from __future__ import annotations

import csv
import functools
import json
import logging
import math
import sys
from pathlib import Path

import click
import numpy as np

from shiftsite.config import RunConfig, apply_overrides, load_config
from shiftsite.dispatch import Baseline, evaluate_plan, run_baseline
from shiftsite.errors import EnumerationTooLarge, InfeasibleModel, MissingArtifact, ShiftsiteError
from shiftsite.grid import Network, load_network
from shiftsite.ipt import MAX_LEAVES, count_leaves
from shiftsite.mcts import SearchOutcome, search
from shiftsite.metrics import UNDEFINED, plan_metrics
from shiftsite.oracle import enumerate_optimal
from shiftsite.scenario import Scenario, SynthParams, save_scenario, synth_scenario

log = logging.getLogger("shiftsite")


def clean(obj):
    """JSON-safe copy: non-finite floats become null, numpy scalars plain."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(clean(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _buses(net: Network, mask_or_z) -> list[str]:
    if isinstance(mask_or_z, (int, np.integer)):
        idx = [i for i in range(net.n_buses) if int(mask_or_z) >> i & 1]
    else:
        idx = [int(i) for i in np.flatnonzero(mask_or_z)]
    return [net.bus_names[i] for i in idx]


def _fail(exc: ShiftsiteError):
    click.echo(f"error: {exc}", err=True)
    sys.exit(exc.exit_code)


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ShiftsiteError as exc:
            _fail(exc)

    return wrapper


def _prepare(config, seed=None, time_budget=None, rounds=None, out=None):
    cfg = apply_overrides(load_config(config), seed=seed, time_budget=time_budget, rounds=rounds, out=out)
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    net = cfg.load_network()
    sc = cfg.load_scenario(net)
    return cfg, outdir, net, sc


def _stamp(sc: Scenario, t: int) -> str:
    return sc.timestamps[t] if sc.timestamps else repr(t * sc.dt_hours)


def write_baseline(outdir: Path, cfg: RunConfig, net: Network, sc: Scenario, base: Baseline) -> None:
    write_csv(
        outdir / "baseline.csv",
        ["t", "timestamp", "gen_cost", "emission"],
        ((r.t, _stamp(sc, r.t), r.gen_cost, r.objective) for r in base.results),
    )
    write_csv(
        outdir / "caps.csv",
        ["t", "baseline_cost", "cap"],
        ((t, float(base.caps.baseline_cost[t]), float(base.caps.cap[t])) for t in range(sc.horizon)),
    )
    write_json(outdir / "baseline.json", {
        "config": cfg.echo(),
        "config_hash": cfg.digest(),
        "network": net.name,
        "horizon": sc.horizon,
        "dt_hours": sc.dt_hours,
        "caps_factor": base.caps.factor,
        "total_emission": base.total_emission(sc.dt_hours),
        "total_cost": sc.dt_hours * float(sum(r.gen_cost for r in base.results)),
    })


def write_trace(outdir: Path, net: Network, outcome: SearchOutcome) -> None:
    write_csv(
        outdir / "trace.csv",
        ["round", "z", "objective", "best", "infeasible_rollouts"],
        ((r.round, " ".join(_buses(net, r.mask)), r.objective, r.best, r.infeasible_rollouts)
         for r in outcome.trace),
    )


@click.group()
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def main(verbose: int) -> None:
    """Carbon-aware siting of shiftable loads."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


config_opt = click.option("--config", "config", required=True, type=click.Path(dir_okay=False),
                          help="Run configuration (JSON).")
out_opt = click.option("--out", default=None, type=click.Path(file_okay=False), help="Output directory.")


@main.command()
@config_opt
@out_opt
@guarded
def baseline(config, out):
    """Cost-optimal dispatch without shifting, and the cost caps."""
    cfg, outdir, net, sc = _prepare(config, out=out)
    base = run_baseline(net, sc, cfg.caps_factor, cfg.workers)
    write_baseline(outdir, cfg, net, sc, base)
    click.echo(f"baseline emission {base.total_emission(sc.dt_hours):.6f} tCO2 over {sc.horizon} steps -> {outdir}")


@main.command()
@config_opt
@click.option("--seed", type=int, default=None, help="Search seed.")
@click.option("--time-budget", type=float, default=None, help="Wall-clock budget in seconds.")
@click.option("--rounds", type=int, default=None, help="Maximum search rounds.")
@out_opt
@guarded
def plan(config, seed, time_budget, rounds, out):
    """Search for the lowest-emission siting plan."""
    cfg, outdir, net, sc = _prepare(config, seed, time_budget, rounds, out)
    budget = cfg.make_budget(net)
    head = {
        "config": cfg.echo(),
        "config_hash": cfg.digest(),
        "network": net.name,
        "shift_basis": {"kind": "star", "hub_bus": net.bus_names[net.hub_bus]},
    }
    try:
        base = run_baseline(net, sc, cfg.caps_factor, cfg.workers)
        write_baseline(outdir, cfg, net, sc, base)
        outcome = search(net, sc, budget, base.caps, cfg.search, cfg.workers)
    except InfeasibleModel as exc:
        # covers an infeasible baseline as well as a fully pruned tree
        write_json(outdir / "report.json", {**head, "status": "no_feasible_plan", "diagnosis": str(exc)})
        _fail(exc)
        return
    z = outcome.z_star.z.astype(float)
    ev = evaluate_plan(net, sc, z, base.caps, cfg.workers)
    ns = evaluate_plan(net, sc, np.zeros(net.n_buses), base.caps, cfg.workers)
    m = plan_metrics(base.total_emission(sc.dt_hours), ev, ns)
    opf_series = np.array([r.objective for r in base.results])
    write_json(outdir / "report.json", {
        **head,
        "status": "converged" if outcome.converged else "budget_exhausted",
        "z_star": [int(v) for v in outcome.z_star.z],
        "z_star_buses": _buses(net, outcome.z_star.z),
        "metrics": m.to_dict(),
        "search": {
            "rounds": outcome.rounds_used,
            "converged": outcome.converged,
            "stop_reason": outcome.stop_reason,
            "best_objective": outcome.best_objective,
            "evaluated_leaves": len(outcome.evaluations),
            "pruned_leaves": sum(1 for v in outcome.evaluations.values() if not math.isfinite(v)),
            "tree_nodes": len(outcome.tree),
        },
        "emission_series": {"opf": opf_series, "ls": ev.emission_series, "no_shift": ns.emission_series},
    })
    write_csv(
        outdir / "emissions.csv",
        ["t", "timestamp", "opf", "no_shift", "ls", "ls_gen_cost", "cap"],
        ((t, _stamp(sc, t), opf_series[t], ns.emission_series[t], ev.emission_series[t],
          ev.per_t[t].gen_cost, float(base.caps.cap[t])) for t in range(sc.horizon)),
    )
    write_trace(outdir, net, outcome)
    outcome.tree.write_snapshot(outdir / "tree.json")
    write_json(outdir / "timing.json", {
        "wall_time": outcome.wall_time,
        "round_elapsed": [r.elapsed for r in outcome.trace],
    })
    click.echo(
        f"z* = {', '.join(_buses(net, outcome.z_star.z)) or '(none)'}  "
        f"C_LS = {m.c_ls:.6f}  C_OPF = {m.c_opf:.6f}  mu_redu = {100 * m.mu_redu:.3f}%  "
        f"rounds = {outcome.rounds_used} ({outcome.stop_reason})"
    )


@main.command()
@config_opt
@click.option("--limit", type=int, default=MAX_LEAVES, show_default=True,
              help="Refuse to enumerate more leaves than this.")
@out_opt
@guarded
def enumerate(config, limit, out):  # noqa: A001 - command name
    """Evaluate every leaf and report the exact optimum."""
    cfg, outdir, net, sc = _prepare(config, out=out)
    budget = cfg.make_budget(net)
    n_leaves = count_leaves(budget)
    if n_leaves > limit:  # fail before the baseline solves
        raise EnumerationTooLarge(f"{n_leaves} leaves exceed the enumeration limit {limit}")
    base = run_baseline(net, sc, cfg.caps_factor, cfg.workers)
    rep = enumerate_optimal(net, sc, budget, base.caps, cfg.workers, limit)
    doc = rep.to_dict(net.bus_names)
    doc.update({"config": cfg.echo(), "config_hash": cfg.digest(), "network": net.name})
    write_json(outdir / "oracle.json", doc)
    click.echo(
        f"best {', '.join(_buses(net, rep.best_z))}  objective {rep.best_objective:.6f}  "
        f"leaves {rep.evaluated_count}"
    )


def _fmt(v) -> str:
    if v is None or v == UNDEFINED:
        return UNDEFINED
    return f"{v:.6g}"


@main.command()
@click.argument("artifacts", type=click.Path(file_okay=False))
@guarded
def report(artifacts):
    """Summarize a plan run and export plot-ready series."""
    d = Path(artifacts)
    for name in ("report.json", "trace.csv", "baseline.csv"):
        if not (d / name).exists():
            raise MissingArtifact(f"{d / name} not found; run `plan` first")
    rep = json.loads((d / "report.json").read_text())
    if rep.get("status") == "no_feasible_plan":
        click.echo(f"no feasible plan: {rep.get('diagnosis')}")
        return
    m = rep["metrics"]
    rows = [
        ("C_OPF [tCO2]", m["c_opf"]),
        ("C_LS [tCO2]", m["c_ls"]),
        ("C_NS [tCO2]", m["c_ns"]),
        ("delta [tCO2]", m["delta"]),
        ("mu_redu", m["mu_redu"]),
        ("L allowed [MWh]", m["allowed"]),
        ("S shifted [MWh]", m["shifted"]),
        ("mu_allow [tCO2/MWh]", m["mu_allow"]),
        ("mu_shift [tCO2/MWh]", m["mu_shift"]),
    ]
    write_csv(d / "metrics.csv", ["metric", "value"], ((k, _fmt(v)) for k, v in rows))
    with open(d / "trace.csv", newline="") as fh:
        trace = list(csv.DictReader(fh))
    write_csv(d / "convergence.csv", ["round", "objective", "best"],
              ((r["round"], r["objective"], r["best"]) for r in trace))
    click.echo(f"network {rep['network']}  config {rep['config_hash'][:12]}  status {rep['status']}")
    click.echo(f"z* = {', '.join(rep['z_star_buses']) or '(none)'}")
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        click.echo(f"  {k:<{width}}  {_fmt(v)}")
    s = rep["search"]
    click.echo(f"  rounds {s['rounds']} ({s['stop_reason']}), leaves evaluated {s['evaluated_leaves']}")


@main.command()
@click.option("--config", "config", default=None, type=click.Path(dir_okay=False),
              help="Take network and generator parameters from a run configuration.")
@click.option("--network", default=None, help="Network file or bundled:<name>.")
@click.option("--params", default=None, type=click.Path(dir_okay=False), help="Generator parameters (JSON).")
@click.option("--seed", type=int, default=None, help="Generator seed.")
@click.option("--out", "out", required=True, type=click.Path(dir_okay=False), help="Scenario CSV to write.")
@guarded
def synth(config, network, params, seed, out):
    """Generate a seeded synthetic scenario."""
    if config:
        cfg = load_config(config)
        if "synth" not in cfg.scenario:
            raise MissingArtifact("config has no scenario.synth section")
        net = load_network(cfg.resolve(network or cfg.network))
        p = SynthParams.from_dict(cfg.scenario["synth"])
        seed = int(cfg.scenario.get("seed", 0)) if seed is None else seed
    else:
        if not network:
            raise MissingArtifact("--network or --config is required")
        net = load_network(network)
        p = SynthParams.from_dict(json.loads(Path(params).read_text())) if params else SynthParams()
    sc = synth_scenario(p, net, 0 if seed is None else seed)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_scenario(sc, net, out)
    click.echo(f"wrote {sc.horizon} steps for {net.name} -> {out}")


if __name__ == "__main__":
    main()
