"""
Final-annuity statistics, present values of cash flows and percentile fans.

Standard deviations use the sample (n - 1) convention; a single path
reports 0.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .domain import ProblemSpec
from .mortality import GompertzMakeham, hazard, simpson_grid
from .simulator import Absorption, Ensemble, PathResult

STAT_ROWS = (
    ("mean_fa", "mean FA"),
    ("sd_fa", "sd. FA"),
    ("mean_pv", "mean PV"),
    ("sd_pv", "sd. PV"),
    ("prob_fa_gt_c1", "Prob(FA > C1) (%)"),
    ("prob_fa_eq_half_c1", "Prob(FA = 1/2 C1) (%)"),
    ("mean_consumption", "mean consumption"),
)


@dataclass(frozen=True)
class ScenarioSummary:
    mean_fa: float
    sd_fa: float
    mean_pv: float
    sd_pv: float
    prob_fa_gt_c1: float
    prob_fa_eq_half_c1: float
    mean_consumption: float

    def as_dict(self) -> dict:
        return asdict(self)


def final_annuity(terminal_wealth, a75):
    return np.asarray(terminal_wealth) / a75


def annuity_phase_weight(spec: ProblemSpec, max_age: float = 100.0) -> float:
    """int_T^{max_age - age0} D(t) dt: value at time 0 of 1/yr paid after annuitisation."""
    p = spec.plan
    s, w = simpson_grid(max_age - p.age0 - p.T)
    return float(w @ spec.discount(p.T + s))


def _present_values(t, wealth, consumption, spec: ProblemSpec, law: GompertzMakeham,
                    max_age: float) -> np.ndarray:
    p = spec.plan
    # consumption is held over each step; the last rate is reused at t = T
    c = np.concatenate([consumption, consumption[..., -1:]], axis=-1)
    death = hazard(law, p.age0 + t)
    flow = spec.discount(t) * (c + death * wealth)
    before = np.trapezoid(flow, t, axis=-1)
    after = wealth[..., -1] / p.a75 * annuity_phase_weight(spec, max_age)
    return before + after


def present_value(path: PathResult, spec: ProblemSpec, law: GompertzMakeham | None = None,
                  max_age: float = 100.0) -> float:
    """Market value at retirement of withdrawals, death benefit and the bought annuity.

    Death before annuitisation is integrated out: wealth X(t) flows out at
    the hazard rate. Uses the path's own time grid (uniform, ending at T).
    """
    law = law or spec.law
    n = len(path.wealth_series) - 1
    t = np.linspace(0.0, spec.plan.T, n + 1)
    return float(_present_values(t, path.wealth_series, path.consumption_series,
                                 spec, law, max_age))


def ensemble_present_values(ensemble: Ensemble, spec: ProblemSpec, max_age: float = 100.0):
    return _present_values(ensemble.t, ensemble.wealth, ensemble.consumption,
                           spec, spec.law, max_age)


def path_losses(ensemble: Ensemble, spec: ProblemSpec) -> np.ndarray:
    """Realised loss of every path: discounted running cost plus terminal shortfall."""
    p = spec.plan
    d = spec.discount(ensemble.t)
    running = p.kappa * ensemble.dt * ((p.C1 - ensemble.consumption) ** 2 @ d[:-1])
    terminal = d[-1] * ((p.F - ensemble.terminal_wealth) / p.a75) ** 2
    return running + terminal


def _sd(x) -> float:
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def summarize(ensemble: Ensemble, spec: ProblemSpec, max_age: float = 100.0) -> ScenarioSummary:
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    p = spec.plan
    fa = final_annuity(ensemble.terminal_wealth, p.a75)
    pv = ensemble_present_values(ensemble, spec, max_age)
    # shifted mean: exact when consumption never leaves C2
    mean_c = p.C2 + float(np.mean(ensemble.consumption - p.C2))
    return ScenarioSummary(
        mean_fa=float(np.mean(fa)),
        sd_fa=_sd(fa),
        mean_pv=float(np.mean(pv)),
        sd_pv=_sd(pv),
        prob_fa_gt_c1=float(np.mean(fa > p.C1)),
        prob_fa_eq_half_c1=float(np.mean(ensemble.absorption == Absorption.SAFETY)),
        mean_consumption=mean_c,
    )


def percentiles(ensemble: Ensemble, quantiles=(0.05, 0.25, 0.5, 0.75, 0.95),
                field: str = "wealth") -> np.ndarray:
    """Per-time-step empirical quantiles, shape (len(quantiles), n_times).

    Linear interpolation between order statistics (numpy's default method).
    """
    data = {"wealth": ensemble.wealth, "invest": ensemble.invest}[field]
    return np.quantile(data, quantiles, axis=0)


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    atom_count: int  # safety-absorbed paths, FA exactly C1/2

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.atom_count


def histogram(ensemble: Ensemble, spec: ProblemSpec, bin_width: float = 0.25) -> Histogram:
    """Fixed-width bins over [C1/2, 1.75*C1]; the C1/2 atom is kept apart.

    The last bin is closed on the right so target-absorbed paths land in it.
    """
    p = spec.plan
    lo, hi = p.S / p.a75, p.F / p.a75
    n_bins = max(1, math.ceil((hi - lo) / bin_width - 1e-9))
    edges = lo + bin_width * np.arange(n_bins + 1)
    edges[-1] = hi
    atom = ensemble.absorption == Absorption.SAFETY
    fa = final_annuity(ensemble.terminal_wealth[~atom], p.a75)
    counts, _ = np.histogram(np.clip(fa, lo, hi), bins=edges)
    return Histogram(edges=edges, counts=counts, atom_count=int(atom.sum()))
