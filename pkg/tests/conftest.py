from __future__ import annotations

import sys

import pytest

from shiftsite.config import load_config
from shiftsite.dispatch import run_baseline
from shiftsite.grid import bundled_network
from shiftsite.scenario import SynthParams, synth_scenario

CASE6 = SynthParams(horizon=24, load_peak=210.0, res_capacity=(120.0, 140.0), res_mean=0.55,
                    ctrl_peak=10.0, expansion=25.0)
IEEE14 = SynthParams(horizon=24, load_peak=259.0, res_capacity=90.0, res_mean=0.6, ctrl_peak=8.0,
                     expansion=25.0)
TOY3 = SynthParams(horizon=24, load_peak=120.0, res_capacity=150.0, res_mean=0.6, ctrl_peak=(30.0, 10.0),
                   expansion=30.0)


class Instance:
    def __init__(self, name: str, params: SynthParams, seed: int):
        self.net = bundled_network(name)
        self.sc = synth_scenario(params, self.net, seed)
        self.baseline = run_baseline(self.net, self.sc)
        self.caps = self.baseline.caps


@pytest.fixture(scope="session")
def toy3():
    return Instance("toy3", TOY3, 1)


@pytest.fixture(scope="session")
def case6():
    return Instance("case6", CASE6, 7)


@pytest.fixture(scope="session")
def ieee14():
    return Instance("ieee14", IEEE14, 7)


@pytest.fixture(scope="session")
def bundled_configs():
    from importlib import resources

    root = resources.files("shiftsite") / "data" / "configs"
    return {name: load_config(str(root / f"{name}.json")) for name in ("toy3", "case6", "ieee14")}


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is None or not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(acc.RESULTS):
        terminalreporter.write_line(acc.line(k))
