from __future__ import annotations

from types import SimpleNamespace

import pytest

from shiftsite.metrics import UNDEFINED, plan_metrics


def plan(total, shifted, allowed):
    return SimpleNamespace(total_emission=total, total_shifted=shifted, total_allowed=allowed)


def test_reduction_per_allowed_energy():
    m = plan_metrics(1000.0, plan(900.0, 25.0, 50.0), plan(950.0, 0.0, 0.0))
    assert m.delta == 100.0
    assert m.mu_allow == 2.0
    assert m.mu_shift == 4.0
    assert m.mu_redu == pytest.approx(0.1)
    assert m.delta_shift == 50.0


def test_nothing_shifted():
    m = plan_metrics(1000.0, plan(980.0, 0.0, 0.0), plan(980.0, 0.0, 0.0))
    assert m.shifted == 0.0
    assert m.mu_shift == UNDEFINED and m.mu_allow == UNDEFINED
    assert m.delta_shift == 0.0
