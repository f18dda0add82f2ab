"""
Monte Carlo simulation of wealth under the computed feedback policies.

Paths are confined between the safety and target curves. A step that ends
on or beyond a curve is projected onto it and the path is absorbed there:
from then on it follows the curve with y = 0 and c = C2 (safety) or
c = C1 (target).

Random numbers: path k draws its Gaussian increments from a generator seeded
with ``SeedSequence(seed, spawn_key=(k,))``. The stream depends only on
(seed, k, number of steps), so every scenario run with the same seed sees the
same shocks (common random numbers) and chunking or threading cannot change
results.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .domain import MarketParams, ProblemSpec, gain, safety_curve, shift, target_curve
from .mortality import WEEK
from .solver import GridSolution


class Absorption(enum.IntEnum):
    NONE = 0
    SAFETY = 1
    TARGET = 2


@dataclass(frozen=True)
class PathConfig:
    n_paths: int = 5000
    seed: int = 20240615
    dt_sim: float = WEEK

    def __post_init__(self):
        if self.n_paths <= 0:
            raise ValueError("n_paths > 0 required")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if not self.dt_sim > 0:
            raise ValueError("dt_sim > 0 required")

    def n_steps(self, T: float) -> int:
        n = round(T / self.dt_sim)
        if n < 1 or abs(n * self.dt_sim - T) > 1e-12 * max(1.0, T):
            raise ValueError(f"dt_sim={self.dt_sim} does not divide T={T}")
        return n


@dataclass(frozen=True)
class PathResult:
    terminal_wealth: float
    absorption: Absorption
    absorption_time: float  # nan when never absorbed
    wealth_series: np.ndarray       # n_steps + 1 values, t = 0 .. T
    consumption_series: np.ndarray  # n_steps values, rate held over each step
    invest_series: np.ndarray       # n_steps values


@dataclass
class Ensemble:
    """Paths stored column-wise; indexing yields :class:`PathResult`."""

    t: np.ndarray
    wealth: np.ndarray       # (n_paths, n_steps + 1)
    consumption: np.ndarray  # (n_paths, n_steps)
    invest: np.ndarray       # (n_paths, n_steps)
    absorption: np.ndarray   # (n_paths,) Absorption codes
    absorption_time: np.ndarray

    def __len__(self) -> int:
        return self.wealth.shape[0]

    def __getitem__(self, k: int) -> PathResult:
        return PathResult(
            terminal_wealth=float(self.wealth[k, -1]),
            absorption=Absorption(int(self.absorption[k])),
            absorption_time=float(self.absorption_time[k]),
            wealth_series=self.wealth[k],
            consumption_series=self.consumption[k],
            invest_series=self.invest[k],
        )

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    @property
    def terminal_wealth(self) -> np.ndarray:
        return self.wealth[:, -1]

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @classmethod
    def concat(cls, parts: list["Ensemble"]) -> "Ensemble":
        return cls(
            t=parts[0].t,
            wealth=np.concatenate([p.wealth for p in parts]),
            consumption=np.concatenate([p.consumption for p in parts]),
            invest=np.concatenate([p.invest for p in parts]),
            absorption=np.concatenate([p.absorption for p in parts]),
            absorption_time=np.concatenate([p.absorption_time for p in parts]),
        )


def gaussian_stream(seed: int, path_index: int, n_steps: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(path_index,)))
    return rng.standard_normal(n_steps)


def policy_lookup(solution: GridSolution, t: float, x):
    """Feedback policy at (t, x) by bilinear interpolation in (t, z)."""
    spec, grid = solution.spec, solution.grid
    lo, hi = solution.config.y_bounds
    p = spec.plan
    x = np.asarray(x, dtype=float)
    tol = spec.tolerance
    s_t, f_t = safety_curve(spec, t), target_curve(spec, t)
    if np.any(x < s_t - tol) or np.any(x > f_t + tol):
        raise ValueError(f"wealth outside [S(t), F(t)] at t={t}")
    z = np.clip(x * gain(spec, t) + shift(spec, t), grid.S, grid.F)

    pos_t = t / grid.dt
    i0 = min(max(int(math.floor(pos_t + 1e-9)), 0), grid.n_time_steps - 1)
    wt = min(max(pos_t - i0, 0.0), 1.0)
    pos_z = (z - grid.S) / grid.dz
    j0 = np.clip(np.floor(pos_z).astype(int), 0, grid.n_space_interior)
    wz = pos_z - j0

    def interp(arr):
        col0 = arr[i0, j0] * (1.0 - wz) + arr[i0, j0 + 1] * wz
        if wt == 0.0:
            return col0
        col1 = arr[i0 + 1, j0] * (1.0 - wz) + arr[i0 + 1, j0 + 1] * wz
        return col0 * (1.0 - wt) + col1 * wt

    y = np.clip(interp(solution.invest), lo, hi)
    c = np.clip(interp(solution.consume), p.C2, p.C1)
    return y, c


def euler_step(market: MarketParams, x, y, c, gaussian_draw, dt: float,
               lower=None, upper=None):
    """One step of the wealth dynamics, optionally projected into [lower, upper].

    The riskless part (r*x - c) is integrated exactly, so the null policy
    moves a barrier point exactly onto the barrier at the next time; the
    risky excess return is stepped with Euler-Maruyama.
    """
    r = market.r
    growth = math.exp(r * dt)
    annuity = math.expm1(r * dt) / r if r != 0 else dt
    risky = (market.mu - r) * dt + market.sigma * math.sqrt(dt) * np.asarray(gaussian_draw)
    x_next = np.asarray(x) * growth - np.asarray(c) * annuity + np.asarray(y) * np.asarray(x) * risky
    if lower is not None or upper is not None:
        x_next = np.clip(x_next, lower, upper)
    return x_next


def _simulate_block(solution: GridSolution, spec: ProblemSpec, n_steps: int, dt: float,
                    draws: np.ndarray) -> Ensemble:
    p = spec.plan
    tol = spec.tolerance
    n = draws.shape[0]
    t = np.arange(n_steps + 1) * dt
    t[-1] = p.T
    s_curve = safety_curve(spec, t)
    f_curve = target_curve(spec, t)

    wealth = np.empty((n, n_steps + 1))
    consumption = np.empty((n, n_steps))
    invest = np.empty((n, n_steps))
    status = np.zeros(n, dtype=np.int8)
    hit_time = np.full(n, np.nan)

    x = np.full(n, p.x0)
    for code, hit in ((Absorption.SAFETY, x <= s_curve[0] + tol),
                      (Absorption.TARGET, x >= f_curve[0] - tol)):
        status[hit] = code
        hit_time[hit] = 0.0
    x = np.where(status == Absorption.SAFETY, s_curve[0], x)
    x = np.where(status == Absorption.TARGET, f_curve[0], x)
    wealth[:, 0] = x

    for k in range(n_steps):
        y, c = policy_lookup(solution, t[k], x)
        safe = status == Absorption.SAFETY
        top = status == Absorption.TARGET
        y = np.where(safe | top, 0.0, y)
        c = np.where(safe, p.C2, np.where(top, p.C1, c))
        x_next = euler_step(spec.market, x, y, c, draws[:, k], dt)

        free = status == Absorption.NONE
        down = free & (x_next <= s_curve[k + 1] + tol)
        up = free & (x_next >= f_curve[k + 1] - tol)
        status[down] = Absorption.SAFETY
        status[up] = Absorption.TARGET
        hit_time[down | up] = t[k + 1]
        x = np.where(status == Absorption.SAFETY, s_curve[k + 1],
                     np.where(status == Absorption.TARGET, f_curve[k + 1], x_next))
        wealth[:, k + 1] = x
        consumption[:, k] = c
        invest[:, k] = y
    return Ensemble(t, wealth, consumption, invest, status, hit_time)


def simulate_path(solution: GridSolution, spec: ProblemSpec, path_config: PathConfig,
                  path_index: int) -> PathResult:
    n_steps = path_config.n_steps(spec.plan.T)
    draws = gaussian_stream(path_config.seed, path_index, n_steps)[None, :]
    return _simulate_block(solution, spec, n_steps, path_config.dt_sim, draws)[0]


def simulate_ensemble(solution: GridSolution, spec: ProblemSpec, path_config: PathConfig,
                      chunk_size: int | None = None, workers: int = 1) -> Ensemble:
    """Simulate ``n_paths`` paths; results do not depend on chunking or workers."""
    n_steps = path_config.n_steps(spec.plan.T)
    total = path_config.n_paths
    chunk_size = chunk_size or total
    bounds = [(a, min(a + chunk_size, total)) for a in range(0, total, chunk_size)]

    def run(bound):
        a, b = bound
        draws = np.vstack([gaussian_stream(path_config.seed, k, n_steps) for k in range(a, b)])
        return _simulate_block(solution, spec, n_steps, path_config.dt_sim, draws)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]
    return parts[0] if len(parts) == 1 else Ensemble.concat(parts)


def dump_paths_csv(ensemble: Ensemble, directory, prefix: str = "path") -> list[Path]:
    """One CSV per path with columns t, X, y, c (y and c blank at t = T)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for k in range(len(ensemble)):
        path = directory / f"{prefix}_{k:05d}.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("t,X,y,c\n")
            for s, ti in enumerate(ensemble.t):
                if s < ensemble.consumption.shape[1]:
                    fh.write(f"{ti:.17g},{ensemble.wealth[k, s]:.17g},"
                             f"{ensemble.invest[k, s]:.17g},{ensemble.consumption[k, s]:.17g}\n")
                else:
                    fh.write(f"{ti:.17g},{ensemble.wealth[k, s]:.17g},,\n")
        out.append(path)
    return out
