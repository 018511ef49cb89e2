"""Emission-reduction metrics of a siting plan against the cost-optimal baseline."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from shiftsite.dispatch import Baseline, PlanEvaluation

UNDEFINED = "undefined"


@dataclass(frozen=True)
class PlanMetrics:
    """Totals in tCO2 and MWh.

    ``c_ns`` is the emission-minimal dispatch under the same cost caps with no
    shifting allowed, so ``c_opf - c_ns`` is what re-dispatch alone achieves
    and ``c_ns - c_ls`` is the part due to shifting.
    """

    c_opf: float
    c_ls: float
    c_ns: float
    delta: float
    mu_redu: float
    allowed: float
    shifted: float
    mu_allow: float | str
    mu_shift: float | str
    delta_shift: float

    def to_dict(self) -> dict:
        return asdict(self)


# shifted energy below this is solver noise, not a shift [MWh]
ZERO_ENERGY = 1e-6


def _ratio(num: float, den: float) -> float | str:
    return num / den if den > ZERO_ENERGY else UNDEFINED


def plan_metrics(c_opf: float, plan: PlanEvaluation, no_shift: PlanEvaluation) -> PlanMetrics:
    c_ls = plan.total_emission
    delta = c_opf - c_ls
    return PlanMetrics(
        c_opf=c_opf,
        c_ls=c_ls,
        c_ns=no_shift.total_emission,
        delta=delta,
        mu_redu=delta / c_opf if c_opf > 0 else math.nan,
        allowed=plan.total_allowed,
        shifted=plan.total_shifted,
        mu_allow=_ratio(delta, plan.total_allowed),
        mu_shift=_ratio(delta, plan.total_shifted),
        delta_shift=no_shift.total_emission - c_ls,
    )


def metrics_from_baseline(baseline: Baseline, dt_hours: float, plan: PlanEvaluation,
                          no_shift: PlanEvaluation) -> PlanMetrics:
    return plan_metrics(baseline.total_emission(dt_hours), plan, no_shift)
