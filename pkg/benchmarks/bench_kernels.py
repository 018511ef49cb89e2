"""Compare the numba and pure-numpy ADMM kernels.

Two measurements:

* kernel: a fixed number of ADMM steps on one dispatch QP of the bundled
  network, both variants in this process;
* end to end: evaluating one location vector over the whole horizon in a
  fresh interpreter, with and without ``SHIFTSITE_NO_NUMBA=1``.

Usage::

    python benchmarks/bench_kernels.py [--network ieee14] [--steps 2000] [--repeat 5]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from shiftsite import kernels
from shiftsite.dispatch import dispatch_model, run_baseline
from shiftsite.grid import bundled_network
from shiftsite.scenario import SynthParams, synth_scenario

SCENARIO = dict(horizon=24, load_peak=259.0, res_capacity=90.0, res_mean=0.6, ctrl_peak=8.0, expansion=25.0)

END_TO_END = """
import json, time, numpy as np
from shiftsite.dispatch import evaluate_plan, run_baseline
from shiftsite.grid import bundled_network
from shiftsite.scenario import SynthParams, synth_scenario
net = bundled_network({net!r})
sc = synth_scenario(SynthParams(**{params!r}), net, 7)
caps = run_baseline(net, sc).caps
z = np.zeros(net.n_buses); z[: min(3, net.n_buses)] = 1
evaluate_plan(net, sc, z, caps)  # warm-up (compilation, factor cache)
t0 = time.perf_counter()
for _ in range({repeat}):
    evaluate_plan(net, sc, 1 - z, caps)
    evaluate_plan(net, sc, z, caps)
print(json.dumps({{"seconds": (time.perf_counter() - t0) / (2 * {repeat})}}))
"""


def kernel_case(network: str):
    net = bundled_network(network)
    sc = synth_scenario(SynthParams(**SCENARIO), net, 7) if network == "ieee14" else synth_scenario(
        SynthParams(horizon=24), net, 7)
    model = dispatch_model(net)
    caps = run_baseline(net, sc).caps
    z = np.ones(net.n_buses)
    l, u = model.bounds(sc, 0, z, float(caps.cap[0]))
    ws = model.ws_emission
    return ws, ws.E * l, ws.E * u


def time_kernel(fn, ws, ls, us, steps: int, repeat: int) -> float:
    st = ws.settings
    rho = ws._rho_vector(st.rho, ls, us)
    fac = ws._factor(rho)
    best = np.inf
    for _ in range(repeat):
        x = np.zeros(ws.n)
        z = np.clip(np.zeros(ws.m), ls, us)
        y = np.zeros(ws.m)
        t0 = time.perf_counter()
        # tolerances of zero keep the loop running for exactly ``steps`` steps
        fn(fac, ws.Ps, ws.As, ws.Ats, ws.qs, ls, us, rho, st.sigma, st.alpha, ws.D, ws.E, ws.c,
           x, z, y, steps, st.check_every, 0.0, 0.0, 0.0, 0.0)
        best = min(best, time.perf_counter() - t0)
    return best


def end_to_end(network: str, repeat: int, disable: bool) -> float:
    env = dict(os.environ)
    if disable:
        env["SHIFTSITE_NO_NUMBA"] = "1"
    else:
        env.pop("SHIFTSITE_NO_NUMBA", None)
    params = SCENARIO if network == "ieee14" else {"horizon": 24}
    code = END_TO_END.format(net=network, params=params, repeat=repeat)
    out = subprocess.run([sys.executable, "-c", code], env=env, check=True, capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])["seconds"]


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--network", default="ieee14")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    ws, ls, us = kernel_case(args.network)
    time_kernel(kernels.admm_iterate_jit, ws, ls, us, 10, 1)  # compile
    t_jit = time_kernel(kernels.admm_iterate_jit, ws, ls, us, args.steps, args.repeat)
    t_py = time_kernel(kernels.admm_iterate_py, ws, ls, us, args.steps, args.repeat)
    print(f"network {args.network}: n={ws.n} m={ws.m}")
    print(f"kernel, {args.steps} ADMM steps:  numba {1e3 * t_jit:8.2f} ms   numpy {1e3 * t_py:8.2f} ms"
          f"   speed-up {t_py / t_jit:5.1f}x")
    e_jit = end_to_end(args.network, args.repeat, disable=False)
    e_py = end_to_end(args.network, args.repeat, disable=True)
    print(f"one plan evaluation (T=24):   numba {1e3 * e_jit:8.2f} ms   numpy {1e3 * e_py:8.2f} ms"
          f"   speed-up {e_py / e_jit:5.1f}x")


if __name__ == "__main__":
    main()
