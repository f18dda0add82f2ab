"""
Run configuration: a flat YAML mapping whose keys follow the model symbols.

Every key is optional; an empty file gives the default experiment. Keys:

    r, mu, sigma            market
    A, B, C                 Gompertz-Makeham law
    rho, T, x0, age0, Tm    plan (rho defaults to r)
    C1, target_multiple, safety_multiple
                            F = target_multiple*C1*a75, S = safety_multiple*C1*a75
    annuity_rate            pricing rate for a75 (defaults to r)
    N, dt                   lattice
    residual_tol, relative_tol, max_policy_iters, y_bounds
    n_paths, seed, dt_sim   Monte Carlo
    c2_ratios, kappas       scenario matrix (ratios may be written "2/3")
    grid_study_N            interior node counts for the refinement study
    output_dir
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import yaml

from .domain import MarketParams, ProblemSpec, reference_problem
from .mortality import WEEK, GompertzMakeham, annuity_value
from .simulator import PathConfig
from .solver import Grid, SolverConfig

CALIBRATION_TOL = 0.02


class ConfigError(ValueError):
    pass


def parse_ratio(value) -> float:
    try:
        return float(Fraction(str(value).strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a number: {value!r}") from exc


@dataclass(frozen=True)
class Scenario:
    c2_ratio: float
    kappa: float

    @property
    def fixed(self) -> bool:
        return self.c2_ratio == 1.0

    @property
    def key(self) -> str:
        if self.fixed:
            return "c2_1.0000_fixed"
        return f"c2_{self.c2_ratio:.4f}_kappa_{self.kappa:.4f}"

    @property
    def label(self) -> str:
        if self.fixed:
            return "C2=C1"
        return f"C2={self.c2_ratio:.4g}C1 kappa={self.kappa:g}"


@dataclass(frozen=True)
class RunConfig:
    market: MarketParams = field(default_factory=MarketParams)
    law: GompertzMakeham = field(default_factory=GompertzMakeham)
    rho: float = 0.03
    T: float = 15.0
    x0: float = 100.0
    age0: float = 60.0
    Tm: float = 100.0
    C1: float = 6.5155
    target_multiple: float = 1.75
    safety_multiple: float = 0.5
    annuity_rate: float = 0.03
    N: int = 200
    dt: float = WEEK
    solver: SolverConfig = field(default_factory=SolverConfig)
    paths: PathConfig = field(default_factory=PathConfig)
    c2_ratios: tuple[float, ...] = (0.5, 2 / 3, 0.75, 1.0)
    kappas: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    grid_study_N: tuple[int, ...] = (100, 200, 400)
    output_dir: str = "results"

    def scenarios(self) -> list[Scenario]:
        """Scenario matrix in table order; C2 = C1 appears once since kappa has no effect."""
        out = []
        for ratio in self.c2_ratios:
            if ratio == 1.0:
                out.append(Scenario(1.0, self.kappas[0]))
            else:
                out.extend(Scenario(ratio, k) for k in self.kappas)
        return out

    def problem(self, scenario: Scenario) -> ProblemSpec:
        return reference_problem(
            scenario.c2_ratio, scenario.kappa, market=self.market, law=self.law,
            C1=self.C1, x0=self.x0, T=self.T, age0=self.age0, rho=self.rho,
            max_age=self.Tm, target_multiple=self.target_multiple,
            safety_multiple=self.safety_multiple, annuity_rate=self.annuity_rate,
        )

    def grid(self, spec: ProblemSpec, n_space: int | None = None) -> Grid:
        return Grid.for_spec(spec, self.dt, n_space or self.N)

    @property
    def a75(self) -> float:
        return annuity_value(self.law, self.age0 + self.T, self.annuity_rate, self.Tm)

    @property
    def a_retirement(self) -> float:
        return annuity_value(self.law, self.age0, self.annuity_rate, self.Tm)

    def calibration(self) -> dict:
        """Compare the retirement annuity with x0 / C1."""
        implied = self.x0 / self.C1
        value = self.a_retirement
        rel = abs(value - implied) / implied
        return {"annuity_at_retirement": value, "implied_by_C1": implied,
                "relative_error": rel, "ok": rel <= CALIBRATION_TOL}

    def validate(self) -> "RunConfig":
        if not self.c2_ratios or not self.kappas:
            raise ConfigError("c2_ratios and kappas must be non-empty")
        for s in self.scenarios():
            try:
                spec = self.problem(s)
                self.grid(spec)
            except ValueError as exc:
                raise ConfigError(f"scenario {s.label}: {exc}") from exc
        self.paths.n_steps(self.T)
        return self


_MARKET = {"r", "mu", "sigma"}
_LAW = {"A": "a_const", "B": "b_coeff", "C": "c_growth"}
_SOLVER = {"residual_tol", "relative_tol", "max_policy_iters", "y_bounds"}
_PATHS = {"n_paths", "seed", "dt_sim"}
_PLAIN = {"rho", "T", "x0", "age0", "Tm", "C1", "target_multiple", "safety_multiple",
          "annuity_rate", "N", "dt", "c2_ratios", "kappas", "grid_study_N", "output_dir"}
KNOWN_KEYS = _MARKET | set(_LAW) | _SOLVER | _PATHS | _PLAIN


def _number(key, value, kind=float):
    if isinstance(value, bool):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    try:
        if kind is int:
            if float(value) != int(value):
                raise ValueError
            return int(value)
        return parse_ratio(value) if isinstance(value, str) else float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from exc


def _sequence(key, value, kind=float) -> tuple:
    if isinstance(value, (str, int, float)):
        value = [value]
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{key}: expected a non-empty list")
    return tuple(_number(key, v, kind) for v in value)


def build_config(raw: dict | None = None) -> RunConfig:
    """Validated :class:`RunConfig` from a mapping of overrides."""
    raw = dict(raw or {})
    unknown = sorted(set(raw) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")

    def build(key_group, cls, rename=None, **extra):
        kwargs = dict(extra)
        for key in key_group:
            if key in raw:
                name = (rename or {}).get(key, key)
                kind = int if key in ("max_policy_iters", "n_paths", "seed") else float
                kwargs[name] = (tuple(_sequence(key, raw[key])) if key == "y_bounds"
                                else _number(key, raw[key], kind))
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"{cls.__name__}: {exc}") from exc

    market = build(_MARKET, MarketParams)
    law = build(_LAW, GompertzMakeham, rename=_LAW)
    solver = build(_SOLVER, SolverConfig)
    if "y_bounds" in raw and len(solver.y_bounds) != 2:
        raise ConfigError("y_bounds: expected two numbers")
    paths = build(_PATHS, PathConfig)

    kwargs = {"market": market, "law": law, "solver": solver, "paths": paths}
    kwargs["rho"] = _number("rho", raw["rho"]) if "rho" in raw else market.r
    kwargs["annuity_rate"] = (_number("annuity_rate", raw["annuity_rate"])
                              if "annuity_rate" in raw else market.r)
    for key in ("T", "x0", "age0", "Tm", "C1", "target_multiple", "safety_multiple", "dt"):
        if key in raw:
            kwargs[key] = _number(key, raw[key])
    if "N" in raw:
        kwargs["N"] = _number("N", raw["N"], int)
    for key in ("c2_ratios", "kappas"):
        if key in raw:
            kwargs[key] = _sequence(key, raw[key])
    if "grid_study_N" in raw:
        kwargs["grid_study_N"] = _sequence("grid_study_N", raw["grid_study_N"], int)
    if "output_dir" in raw:
        kwargs["output_dir"] = str(raw["output_dir"])

    cfg = RunConfig(**kwargs)
    for ratio in cfg.c2_ratios:
        if not 0 < ratio <= 1:
            raise ConfigError(f"c2_ratios: 0 < ratio <= 1 required, got {ratio}")
    for k in cfg.kappas:
        if not k >= 0:
            raise ConfigError(f"kappas: kappa >= 0 required, got {k}")
    if cfg.N < 1:
        raise ConfigError("N: N >= 1 required")
    return cfg.validate()


def load_config(path) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a key-value mapping")
    return build_config(raw)
