"""
Problem parameters, the wealth barriers and the rectifying change of variables.

Wealth x at time t lives between the safety curve S(t) and the target curve
F(t). The affine map z = x * G(t) + H(t) sends S(t) to the terminal safety
level S and F(t) to the terminal target F, so the HJB problem can be solved
on the rectangle [0, T] x [S, F].

All curve functions accept scalars or numpy arrays for ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .mortality import GompertzMakeham, annuity_value, combined_discount

DOMAIN_RTOL = 1e-9


@dataclass(frozen=True)
class MarketParams:
    r: float = 0.03
    mu: float = 0.08
    sigma: float = 0.15

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma > 0 required, got {self.sigma}")
        if not self.mu > self.r:
            raise ValueError(f"mu > r required, got mu={self.mu}, r={self.r}")

    @property
    def sharpe(self) -> float:
        return (self.mu - self.r) / self.sigma


@dataclass(frozen=True)
class PlanParams:
    """Decumulation plan. Money amounts share the unit of ``x0``."""

    T: float
    C1: float
    C2: float
    F: float
    S: float
    kappa: float
    rho: float
    x0: float
    age0: float
    a75: float

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"T > 0 required, got {self.T}")
        if not 0 < self.C2 <= self.C1:
            raise ValueError(f"0 < C2 <= C1 required, got C2={self.C2}, C1={self.C1}")
        if not 0 <= self.S < self.F:
            raise ValueError(f"0 <= S < F required, got S={self.S}, F={self.F}")
        if not self.kappa >= 0:
            raise ValueError(f"kappa >= 0 required, got {self.kappa}")
        if not self.a75 > 0:
            raise ValueError(f"a75 > 0 required, got {self.a75}")


@dataclass(frozen=True)
class ProblemSpec:
    """Market, plan and mortality law; validates the initial wealth on creation."""

    market: MarketParams
    plan: PlanParams
    law: GompertzMakeham = field(default_factory=GompertzMakeham)

    def __post_init__(self):
        if not self.market.r > 0:
            raise ValueError("r > 0 required for the barrier curves")
        s0, f0 = safety_curve(self, 0.0), target_curve(self, 0.0)
        if not s0 < f0:
            raise ValueError(f"S(0) < F(0) required, got S(0)={s0}, F(0)={f0}")
        tol = DOMAIN_RTOL * (self.plan.F - self.plan.S)
        if not s0 - tol <= self.plan.x0 <= f0 + tol:
            raise ValueError(
                f"x0={self.plan.x0} outside [S(0), F(0)] = [{s0:.6g}, {f0:.6g}]"
            )

    @property
    def tolerance(self) -> float:
        return DOMAIN_RTOL * (self.plan.F - self.plan.S)

    def with_plan(self, **changes) -> "ProblemSpec":
        return replace(self, plan=replace(self.plan, **changes))

    def discount(self, t):
        """Subjective discount times survival from age0 over [0, t]."""
        return combined_discount(self.law, self.plan.rho, self.plan.age0, t)


def reference_problem(
    c2_ratio: float = 0.5,
    kappa: float = 0.5,
    *,
    market: MarketParams | None = None,
    law: GompertzMakeham | None = None,
    C1: float = 6.5155,
    x0: float = 100.0,
    T: float = 15.0,
    age0: float = 60.0,
    rho: float | None = None,
    max_age: float = 100.0,
    target_multiple: float = 1.75,
    safety_multiple: float = 0.5,
    annuity_rate: float | None = None,
) -> ProblemSpec:
    """Problem with F and S set as multiples of C1 * a75.

    ``rho`` and the annuity pricing rate both default to the risk-free rate.
    """
    market = market or MarketParams()
    law = law or GompertzMakeham()
    rho = market.r if rho is None else rho
    rate = market.r if annuity_rate is None else annuity_rate
    a75 = annuity_value(law, age0 + T, rate, max_age)
    plan = PlanParams(
        T=T,
        C1=C1,
        C2=c2_ratio * C1,
        F=target_multiple * C1 * a75,
        S=safety_multiple * C1 * a75,
        kappa=kappa,
        rho=rho,
        x0=x0,
        age0=age0,
        a75=a75,
    )
    return ProblemSpec(market=market, plan=plan, law=law)


def _growth(spec: ProblemSpec, t):
    """e^{r(T-t)}"""
    return np.exp(spec.market.r * (spec.plan.T - np.asarray(t, dtype=float)))


def safety_curve(spec: ProblemSpec, t):
    r, p = spec.market.r, spec.plan
    return p.C2 / r - (p.C2 / r - p.S) / _growth(spec, t)


def target_curve(spec: ProblemSpec, t):
    r, p = spec.market.r, spec.plan
    return p.C1 / r + (p.F - p.C1 / r) / _growth(spec, t)


def safety_curve_dt(spec: ProblemSpec, t):
    return spec.market.r * safety_curve(spec, t) - spec.plan.C2


def target_curve_dt(spec: ProblemSpec, t):
    return spec.market.r * target_curve(spec, t) - spec.plan.C1


def gain(spec: ProblemSpec, t):
    """G(t), the slope of the map x -> z."""
    r, p = spec.market.r, spec.plan
    e = _growth(spec, t)
    width = target_curve(spec, t) - safety_curve(spec, t)
    return e + (p.C1 - p.C2) / width * (1.0 - e) / r


def shift(spec: ProblemSpec, t):
    """H(t), the intercept of the map x -> z."""
    r, p = spec.market.r, spec.plan
    e = _growth(spec, t)
    f_t = target_curve(spec, t)
    width = f_t - safety_curve(spec, t)
    return (p.C1 + f_t * (p.C2 - p.C1) / width) * (1.0 - e) / r


def gain_dt(spec: ProblemSpec, t):
    r, p = spec.market.r, spec.plan
    e = _growth(spec, t)
    width = target_curve(spec, t) - safety_curve(spec, t)
    width_dt = r * width - (p.C1 - p.C2)
    annuity = (1.0 - e) / r  # d/dt = e
    return -r * e + (p.C1 - p.C2) * (e / width - annuity * width_dt / width**2)


def shift_dt(spec: ProblemSpec, t):
    r, p = spec.market.r, spec.plan
    e = _growth(spec, t)
    f_t = target_curve(spec, t)
    width = f_t - safety_curve(spec, t)
    width_dt = r * width - (p.C1 - p.C2)
    level = p.C1 + (p.C2 - p.C1) * f_t / width
    level_dt = (p.C2 - p.C1) * (target_curve_dt(spec, t) * width - f_t * width_dt) / width**2
    return level_dt * (1.0 - e) / r + level * e


def _check_between(value, lo, hi, tol, what):
    value = np.asarray(value, dtype=float)
    if np.any(value < lo - tol) or np.any(value > hi + tol):
        raise ValueError(f"{what} outside its admissible interval")


def to_z(spec: ProblemSpec, t, x):
    """Map wealth to the rectified coordinate; rejects x outside [S(t), F(t)]."""
    _check_between(x, safety_curve(spec, t), target_curve(spec, t), spec.tolerance, "wealth")
    return np.asarray(x) * gain(spec, t) + shift(spec, t)


def inverse_state(spec: ProblemSpec, t, z):
    """Wealth corresponding to ``z`` at time ``t`` (the inverse map K)."""
    r, p = spec.market.r, spec.plan
    disc = 1.0 / _growth(spec, t)
    s_t, f_t = safety_curve(spec, t), target_curve(spec, t)
    width = f_t - s_t
    num = r * width * disc * z - (f_t * p.C2 - s_t * p.C1) * (disc - 1.0)
    den = r * width + (p.C1 - p.C2) * (disc - 1.0)
    return num / den


@dataclass(frozen=True)
class DomainGeometry:
    """Curve values and transform coefficients tabulated on a time grid."""

    t: np.ndarray
    safety: np.ndarray
    target: np.ndarray
    gain: np.ndarray
    shift: np.ndarray
    gain_dt: np.ndarray
    shift_dt: np.ndarray
    discount: np.ndarray

    @classmethod
    def tabulate(cls, spec: ProblemSpec, t) -> "DomainGeometry":
        t = np.asarray(t, dtype=float)
        geo = cls(
            t=t,
            safety=safety_curve(spec, t),
            target=target_curve(spec, t),
            gain=gain(spec, t),
            shift=shift(spec, t),
            gain_dt=gain_dt(spec, t),
            shift_dt=shift_dt(spec, t),
            discount=spec.discount(t),
        )
        if np.any(geo.gain <= 0):
            raise ValueError("transform is not increasing: G(t) <= 0 on the grid")
        if np.any(geo.safety >= geo.target):
            raise ValueError("barrier curves cross on the grid")
        return geo
