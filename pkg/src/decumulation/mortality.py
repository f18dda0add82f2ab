"""
Gompertz-Makeham mortality and lifetime annuity values.

The hazard is mu(age) = A + B * C**age. Every discount factor used by the
solver, the simulator and the present-value calculations goes through
:func:`combined_discount`, which uses the exact antiderivative of the hazard.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

WEEK = 1.0 / 52.0


@dataclass(frozen=True)
class GompertzMakeham:
    """Mortality law mu(age) = a_const + b_coeff * c_growth**age."""

    a_const: float = 0.00055845
    b_coeff: float = 0.000025670
    c_growth: float = 1.1011

    def __post_init__(self):
        if not self.a_const >= 0:
            raise ValueError(f"a_const >= 0 required, got {self.a_const}")
        if not self.b_coeff > 0:
            raise ValueError(f"b_coeff > 0 required, got {self.b_coeff}")
        if not self.c_growth > 1:
            raise ValueError(f"c_growth > 1 required, got {self.c_growth}")

    @property
    def log_growth(self) -> float:
        return math.log(self.c_growth)


@dataclass(frozen=True)
class AnnuityQuote:
    age: float
    value: float
    discount_rate: float
    max_age: float


def hazard(law: GompertzMakeham, age):
    """Force of mortality at ``age`` (scalar or array)."""
    return law.a_const + law.b_coeff * np.power(law.c_growth, age)


def cumulative_hazard(law: GompertzMakeham, age0, t):
    """Integral of the hazard from ``age0`` to ``age0 + t``, in closed form."""
    c_age0 = np.power(law.c_growth, age0)
    # expm1 keeps full relative precision for small t
    growth = c_age0 * np.expm1(np.multiply(t, law.log_growth))
    return law.a_const * np.asarray(t) + law.b_coeff * growth / law.log_growth


def combined_discount(law: GompertzMakeham, rho, age0, t):
    """exp(-rho*t - cumulative hazard): time preference times survival."""
    return np.exp(-np.multiply(rho, t) - cumulative_hazard(law, age0, t))


def simpson_weights(n: int, h: float) -> np.ndarray:
    """Composite Simpson weights for ``n`` (even) intervals of width ``h``."""
    if n < 2 or n % 2:
        raise ValueError(f"Simpson needs an even interval count >= 2, got {n}")
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def simpson_grid(horizon: float, step: float = WEEK) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and Simpson weights on [0, horizon] with spacing close to ``step``.

    The interval count is rounded up to the next even number so the actual
    spacing never exceeds ``step``.
    """
    n = max(2, math.ceil(horizon / step - 1e-9))
    n += n % 2
    h = horizon / n
    return np.linspace(0.0, horizon, n + 1), simpson_weights(n, h)


def life_annuity(survival, horizon: float, discount_rate: float, step: float = WEEK) -> float:
    """Integral over [0, horizon] of exp(-discount_rate*t) * survival(t).

    ``survival`` is any vectorised callable of elapsed time; composite Simpson.
    """
    t, w = simpson_grid(horizon, step)
    return float(w @ (np.exp(-discount_rate * t) * survival(t)))


def annuity_value(
    law: GompertzMakeham,
    age: float,
    discount_rate: float,
    max_age: float = 100.0,
    step: float = WEEK,
) -> float:
    """Price at ``age`` of a continuous life annuity paying 1 per year.

    Survival is cut off at ``max_age``.
    """
    if age >= max_age:
        raise ValueError(f"age ({age}) must be below max_age ({max_age})")
    return life_annuity(
        lambda t: np.exp(-cumulative_hazard(law, age, t)),
        max_age - age,
        discount_rate,
        step,
    )


def quote_annuity(
    law: GompertzMakeham, age: float, discount_rate: float, max_age: float = 100.0
) -> AnnuityQuote:
    return AnnuityQuote(
        age=age,
        value=annuity_value(law, age, discount_rate, max_age),
        discount_rate=discount_rate,
        max_age=max_age,
    )
