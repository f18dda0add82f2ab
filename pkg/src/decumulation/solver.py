"""
Backward policy iteration for the HJB equation on the rectified domain.

Each time column is solved by alternating a fully implicit upwind policy
evaluation (one tridiagonal solve) with pointwise minimisation of the
discrete Hamiltonian, until values, policies and the HJB residual settle.
Columns are processed from t = T - dt down to t = 0.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import (
    DomainGeometry,
    ProblemSpec,
    gain,
    gain_dt,
    inverse_state,
    shift_dt,
    to_z,
)
from .mortality import WEEK
from .tridiag import solve_tridiagonal

log = logging.getLogger(__name__)


class MMatrixError(RuntimeError):
    """Assembled column matrix lost the positive coefficient property."""


class PolicyIterationError(RuntimeError):
    """A column did not converge within the iteration budget."""


@dataclass(frozen=True)
class Grid:
    """Lattice t_i = i*dt (i = 0..n_time_steps), z_j = S + j*dz (j = 0..N+1)."""

    T: float
    S: float
    F: float
    n_time_steps: int = 780
    n_space_interior: int = 200

    def __post_init__(self):
        if self.n_time_steps < 1 or self.n_space_interior < 1:
            raise ValueError("grid needs at least one time step and one interior node")
        if not self.S < self.F:
            raise ValueError("S < F required")

    @classmethod
    def for_spec(cls, spec: ProblemSpec, dt: float = WEEK, n_space_interior: int = 200):
        T = spec.plan.T
        n = round(T / dt)
        if abs(n * dt - T) > 1e-12 * max(1.0, T):
            raise ValueError(f"dt={dt} does not divide T={T}")
        return cls(T=T, S=spec.plan.S, F=spec.plan.F, n_time_steps=n,
                   n_space_interior=n_space_interior)

    @property
    def dt(self) -> float:
        return self.T / self.n_time_steps

    @property
    def dz(self) -> float:
        return (self.F - self.S) / (self.n_space_interior + 1)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_time_steps + 1)

    @property
    def z(self) -> np.ndarray:
        return np.linspace(self.S, self.F, self.n_space_interior + 2)


@dataclass(frozen=True)
class SolverConfig:
    residual_tol: float = 1e-6
    relative_tol: float = 1e-6
    max_policy_iters: int = 100
    y_bounds: tuple[float, float] = (-1.0, 2.0)

    def __post_init__(self):
        if not (self.residual_tol > 0 and self.relative_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_policy_iters < 2:
            raise ValueError("max_policy_iters >= 2 required")
        lo, hi = self.y_bounds
        if not lo <= 0 <= hi:
            raise ValueError("y_bounds must contain 0")


# ---------------------------------------------------------------------------
# boundary data and local coefficients
# ---------------------------------------------------------------------------

def running_weight_to_maturity(spec: ProblemSpec, grid: Grid) -> np.ndarray:
    """int_{t_i}^T D(s) ds at every lattice time.

    Simpson on each panel [t_i, t_{i+1}] with its midpoint, accumulated
    from the terminal time backwards.
    """
    t = grid.t
    mid = 0.5 * (t[:-1] + t[1:])
    d = spec.discount(t)
    panels = (d[:-1] + 4.0 * spec.discount(mid) + d[1:]) * (np.diff(t) / 6.0)
    out = np.zeros_like(t)
    out[:-1] = np.cumsum(panels[::-1])[::-1]
    return out


def terminal_and_boundary_values(spec: ProblemSpec, grid: Grid):
    """Terminal column V(T, z_j) and the safety-boundary values V(t_i, S).

    The target boundary is identically zero.
    """
    p = spec.plan
    d_T = float(spec.discount(p.T))
    terminal = d_T * ((p.F - grid.z) / p.a75) ** 2
    terminal[-1] = 0.0
    safety = d_T * ((p.F - p.S) / p.a75) ** 2 + p.kappa * (p.C1 - p.C2) ** 2 * (
        running_weight_to_maturity(spec, grid)
    )
    return terminal, safety


def local_coefficients(spec: ProblemSpec, t, z, y, c):
    """Drift and half squared volatility of Z under the policy (y, c).

    Both are expressed with the untransformed wealth K(t, z).
    """
    m = spec.market
    x = inverse_state(spec, t, z)
    g = gain(spec, t)
    alpha = x * gain_dt(spec, t) + g * ((y * (m.mu - m.r) + m.r) * x - c) + shift_dt(spec, t)
    beta = 0.5 * (g * m.sigma * y * x) ** 2
    return alpha, beta


@dataclass
class ColumnData:
    """Quantities on one time column that do not depend on the policy."""

    spec: ProblemSpec
    t: float
    dt: float
    dz: float
    state: np.ndarray       # wealth K(t, z_j) at interior nodes
    g: float
    drift0: np.ndarray      # drift of Z with y = 0, c = 0
    discount: float
    v_safety: float
    v_target: float = 0.0

    @classmethod
    def build(cls, spec: ProblemSpec, grid: Grid, i: int, geometry: DomainGeometry,
              v_safety: float) -> "ColumnData":
        z = grid.z[1:-1]
        g = float(geometry.gain[i])
        state = (z - geometry.shift[i]) / g
        drift0 = state * geometry.gain_dt[i] + g * spec.market.r * state + geometry.shift_dt[i]
        return cls(spec=spec, t=float(geometry.t[i]), dt=grid.dt, dz=grid.dz, state=state,
                   g=g, drift0=drift0, discount=float(geometry.discount[i]),
                   v_safety=float(v_safety))

    def alpha(self, y, c):
        m = self.spec.market
        return self.drift0 + self.g * ((m.mu - m.r) * y * self.state - c)

    def beta(self, y):
        return 0.5 * (self.g * self.spec.market.sigma * self.state * y) ** 2

    def running_cost(self, c):
        p = self.spec.plan
        return p.kappa * self.discount * (p.C1 - c) ** 2


# ---------------------------------------------------------------------------
# policy evaluation
# ---------------------------------------------------------------------------

@dataclass
class TridiagonalSystem:
    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    rhs: np.ndarray
    # coefficients of the boundary values moved to the right-hand side
    safety_coupling: float
    target_coupling: float

    def dense(self) -> np.ndarray:
        n = len(self.diag)
        a = np.diag(self.diag)
        a[np.arange(1, n), np.arange(n - 1)] = self.lower[1:]
        a[np.arange(n - 1), np.arange(1, n)] = self.upper[:-1]
        return a


def check_m_matrix(system: TridiagonalSystem) -> None:
    """Positive diagonal, non-positive off-diagonals, row dominance (boundary couplings included)."""
    lower = system.lower.copy()
    upper = system.upper.copy()
    lower[0] = -system.safety_coupling
    upper[-1] = -system.target_coupling
    bad = (system.diag <= 0) | (lower > 0) | (upper > 0)
    slack = system.diag + lower + upper
    bad |= slack < -1e-12 * system.diag
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        raise MMatrixError(
            f"row {j}: lower={lower[j]!r} diag={system.diag[j]!r} upper={upper[j]!r}"
        )


def assemble_column_system(col: ColumnData, v_next: np.ndarray, y, c) -> TridiagonalSystem:
    """Implicit upwind discretisation on one column for fixed policies.

    ``v_next`` holds the interior values of the later column. Forward
    differences are used where the drift is non-negative, backward
    differences elsewhere.
    """
    alpha = col.alpha(y, c)
    beta = col.beta(y)
    up = np.maximum(alpha, 0.0) / col.dz + beta / col.dz**2
    down = np.maximum(-alpha, 0.0) / col.dz + beta / col.dz**2
    diag = 1.0 / col.dt + up + down
    rhs = v_next / col.dt + col.running_cost(c)
    rhs[0] += down[0] * col.v_safety
    rhs[-1] += up[-1] * col.v_target
    lower = -down
    upper = -up
    lower[0] = 0.0
    upper[-1] = 0.0
    system = TridiagonalSystem(lower, diag, upper, rhs, float(down[0]), float(up[-1]))
    check_m_matrix(system)
    return system


def evaluate_policy(col: ColumnData, v_next: np.ndarray, y, c) -> np.ndarray:
    s = assemble_column_system(col, v_next, y, c)
    return solve_tridiagonal(s.lower, s.diag, s.upper, s.rhs)


# ---------------------------------------------------------------------------
# policy improvement and residual
# ---------------------------------------------------------------------------

def _with_boundaries(col: ColumnData, v_interior: np.ndarray) -> np.ndarray:
    return np.concatenate(([col.v_safety], v_interior, [col.v_target]))


def difference_quotients(col: ColumnData, v_interior: np.ndarray):
    """Forward, backward and second differences at the interior nodes."""
    v = _with_boundaries(col, v_interior)
    fwd = (v[2:] - v[1:-1]) / col.dz
    bwd = (v[1:-1] - v[:-2]) / col.dz
    second = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / col.dz**2
    return fwd, bwd, second


def discrete_hamiltonian(col: ColumnData, fwd, bwd, second, y, c):
    """Upwinded generator plus running cost, as used in assembly."""
    alpha = col.alpha(y, c)
    return (np.maximum(alpha, 0.0) * fwd + np.minimum(alpha, 0.0) * bwd
            + col.beta(y) * second + col.running_cost(c))


def stationary_consumption(spec: ProblemSpec, g, slope, discount):
    """Minimiser over [C2, C1] of -g*c*slope + kappa*discount*(C1 - c)^2."""
    p = spec.plan
    slope = np.asarray(slope, dtype=float)
    weight = p.kappa * discount
    if weight > 0:
        return np.clip(p.C1 + g * slope / (2.0 * weight), p.C2, p.C1)
    # no running cost: linear in c
    return np.where(slope < 0, p.C2, p.C1)


def stationary_investment(spec: ProblemSpec, g, state, slope, second, y_bounds):
    """Minimiser over y_bounds of g*(mu-r)*state*slope*y + 0.5*(g*sigma*state*y)^2*second."""
    m = spec.market
    lo, hi = y_bounds
    quad = 0.5 * (g * m.sigma * state) ** 2 * second
    lin = g * (m.mu - m.r) * state * slope
    convex = quad > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        y_star = np.where(convex, -lin / (2.0 * np.where(convex, quad, 1.0)), 0.0)
    y_star = np.clip(y_star, lo, hi)
    f_lo = quad * lo**2 + lin * lo
    f_hi = quad * hi**2 + lin * hi
    endpoint = np.where(f_hi < f_lo, hi, lo)
    endpoint = np.where((lin == 0) & (quad == 0), 0.0, endpoint)
    return np.where(convex, y_star, endpoint)


def improve_policy(col: ColumnData, v_interior: np.ndarray, y_bounds):
    """Pointwise minimiser of the discrete Hamiltonian on one column.

    The upwinded Hamiltonian equals max(q_fwd, q_bwd) when V is discretely
    convex, where q_fwd / q_bwd use the forward / backward slope throughout.
    Both are separable in (y, c), so their box minimisers are closed form;
    the remaining candidates are minimisers on the zero-drift line and the
    box corners, which cover the non-convex cases. The candidate with the
    smallest exact upwinded Hamiltonian wins; ties go to the earlier one.

    Returns ``(y, c, h)`` with ``h`` the minimal Hamiltonian value.
    """
    spec = col.spec
    p, m = spec.plan, spec.market
    lo, hi = y_bounds
    fwd, bwd, second = difference_quotients(col, v_interior)
    n = len(v_interior)

    ys, cs = [], []
    for slope in (fwd, bwd):
        ys.append(stationary_investment(spec, col.g, col.state, slope, second, y_bounds))
        cs.append(stationary_consumption(spec, col.g, slope, col.discount))

    # zero-drift line: c = drift0/g + (mu - r)*state*y
    e = (m.mu - m.r) * col.state
    d = p.C1 - col.drift0 / col.g
    y_min = np.maximum(lo, (p.C2 - col.drift0 / col.g) / e)
    y_max = np.minimum(hi, (p.C1 - col.drift0 / col.g) / e)
    feasible = y_min <= y_max
    a = 0.5 * (col.g * m.sigma * col.state) ** 2 * second
    w = p.kappa * col.discount
    den = a + w * e**2
    with np.errstate(divide="ignore", invalid="ignore"):
        y_line = np.where(den > 0, w * e * d / np.where(den > 0, den, 1.0), y_min)
    for y_cand in (np.clip(y_line, y_min, y_max), y_min, y_max):
        y_cand = np.where(feasible, y_cand, 0.0)
        c_cand = np.clip(col.drift0 / col.g + e * y_cand, p.C2, p.C1)
        ys.append(np.where(feasible, y_cand, np.nan))
        cs.append(c_cand)

    for y_c in (lo, hi, 0.0):
        for c_c in (p.C2, p.C1):
            ys.append(np.full(n, y_c))
            cs.append(np.full(n, c_c))

    y_all = np.vstack(ys)
    c_all = np.vstack(cs)
    h_all = discrete_hamiltonian(col, fwd, bwd, second, np.nan_to_num(y_all), c_all)
    h_all = np.where(np.isnan(y_all), np.inf, h_all)
    best = np.argmin(h_all, axis=0)
    cols = np.arange(n)
    return y_all[best, cols], c_all[best, cols], h_all[best, cols]


def hjb_residual(col: ColumnData, v_next: np.ndarray, v_interior: np.ndarray, y, c):
    """Left-hand side of the discrete HJB equation at the interior nodes."""
    fwd, bwd, second = difference_quotients(col, v_interior)
    h = discrete_hamiltonian(col, fwd, bwd, second, y, c)
    return (v_next - v_interior) / col.dt + h


# ---------------------------------------------------------------------------
# column and full solves
# ---------------------------------------------------------------------------

@dataclass
class ColumnResult:
    value: np.ndarray
    invest: np.ndarray
    consume: np.ndarray
    iterations: int
    max_residual: float


def _relative_change(new, old) -> float:
    scale = np.max(np.abs(new))
    diff = np.max(np.abs(new - old))
    if scale == 0:
        return 0.0 if diff == 0 else math.inf
    return diff / scale


def solve_column(col: ColumnData, v_next: np.ndarray, y0, c0,
                 config: SolverConfig = SolverConfig()) -> ColumnResult:
    """Policy iteration on one column, starting from the policies (y0, c0).

    Stops once the HJB residual is below ``residual_tol`` everywhere and the
    relative sup-norm changes of c, y and V are all within ``relative_tol``.
    """
    n = len(v_next)
    y = np.broadcast_to(np.asarray(y0, dtype=float), (n,)).copy()
    c = np.broadcast_to(np.asarray(c0, dtype=float), (n,)).copy()
    v_old = None
    residual = np.full(n, np.inf)
    for it in range(1, config.max_policy_iters + 1):
        v = evaluate_policy(col, v_next, y, c)
        y_new, c_new, h = improve_policy(col, v, config.y_bounds)
        residual = (v_next - v) / col.dt + h
        max_res = float(np.max(np.abs(residual)))
        done = (
            v_old is not None
            and max_res < config.residual_tol
            and _relative_change(c_new, c) <= config.relative_tol
            and _relative_change(y_new, y) <= config.relative_tol
            and _relative_change(v, v_old) <= config.relative_tol
        )
        y, c, v_old = y_new, c_new, v
        if done:
            return ColumnResult(v, y, c, it, max_res)
    j = int(np.argmax(np.abs(residual)))
    raise PolicyIterationError(
        f"column t={col.t:.6f} not converged after {config.max_policy_iters} iterations; "
        f"max |residual| {abs(residual[j]):.3e} at interior node {j + 1}"
    )


def closed_stability_bound(spec: ProblemSpec) -> float:
    """((F - S)/a75)^2 + kappa*(C1 - C2)^2.

    Omits the accumulated discount weight of the running cost, so the
    safety-boundary value can exceed it when kappa*(C1 - C2)^2 is large.
    """
    p = spec.plan
    return ((p.F - p.S) / p.a75) ** 2 + p.kappa * (p.C1 - p.C2) ** 2


def recursive_stability_bound(spec: ProblemSpec, grid: Grid) -> np.ndarray:
    """Per-column sup-norm bound from summing the one-step recursion.

    ||V_i|| <= ||V_{i+1}|| + dt*kappa*D(t_i)*(C1 - C2)^2 telescoped down
    from the terminal column; unlike the closed bound above, it keeps the
    accumulated discount weight and so also covers the safety boundary.
    """
    p = spec.plan
    t = grid.t
    steps = grid.dt * p.kappa * (p.C1 - p.C2) ** 2 * spec.discount(t[:-1])
    out = np.empty_like(t)
    out[-1] = float(spec.discount(p.T)) * ((p.F - p.S) / p.a75) ** 2
    out[:-1] = out[-1] + np.cumsum(steps[::-1])[::-1]
    # the safety boundary uses the Simpson integral, which sits below the left sum
    return out


@dataclass
class GridSolution:
    spec: ProblemSpec
    grid: Grid
    config: SolverConfig
    value: np.ndarray
    invest: np.ndarray
    consume: np.ndarray
    iterations: np.ndarray = field(repr=False)
    max_residual: np.ndarray = field(repr=False)

    @property
    def column_norms(self) -> np.ndarray:
        return np.max(np.abs(self.value), axis=1)

    def value_at(self, t: float, x: float) -> float:
        """V at wealth ``x``, linear in z within the nearest-below column."""
        i = min(int(round(t / self.grid.dt)), self.grid.n_time_steps)
        z = float(to_z(self.spec, self.grid.t[i], x))
        return float(np.interp(z, self.grid.z, self.value[i]))

    def to_csv(self, directory, prefix: str = "") -> list[Path]:
        """Write V, y and c grids: header row of z nodes, first column t."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, arr in (("V", self.value), ("y", self.invest), ("c", self.consume)):
            path = directory / f"{prefix}{name}.csv"
            write_grid_csv(path, self.grid.t, self.grid.z, arr)
            paths.append(path)
        return paths


def write_grid_csv(path, t, z, arr) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t," + ",".join(f"{v:.17g}" for v in z) + "\n")
        for ti, row in zip(t, arr):
            fh.write(f"{ti:.17g}," + ",".join(f"{v:.17g}" for v in row) + "\n")


def read_grid_csv(path):
    data = np.loadtxt(path, delimiter=",", dtype=str)
    z = data[0, 1:].astype(float)
    t = data[1:, 0].astype(float)
    return t, z, data[1:, 1:].astype(float)


def solve(spec: ProblemSpec, grid: Grid | None = None,
          config: SolverConfig = SolverConfig()) -> GridSolution:
    """Full backward sweep; returns values and feedback policies on the lattice.

    Boundary nodes carry the absorbing policies: (0, C2) on the safety
    side and (0, C1) on the target side. The terminal column repeats the
    policies of the last solved column so that lookups at t = T are defined.
    """
    grid = grid or Grid.for_spec(spec)
    p = spec.plan
    n, N = grid.n_time_steps, grid.n_space_interior
    geometry = DomainGeometry.tabulate(spec, grid.t)
    terminal, v_safety = terminal_and_boundary_values(spec, grid)

    value = np.empty((n + 1, N + 2))
    invest = np.zeros((n + 1, N + 2))
    consume = np.empty((n + 1, N + 2))
    value[n] = terminal
    value[:, 0] = v_safety
    value[:, -1] = 0.0
    consume[:, 0] = p.C2
    consume[:, -1] = p.C1
    iterations = np.zeros(n, dtype=int)
    max_residual = np.zeros(n)

    y, c = 0.5, 0.5 * (p.C1 + p.C2)
    for i in range(n - 1, -1, -1):
        col = ColumnData.build(spec, grid, i, geometry, v_safety[i])
        res = solve_column(col, value[i + 1, 1:-1], y, c, config)
        value[i, 1:-1] = res.value
        invest[i, 1:-1] = res.invest
        consume[i, 1:-1] = res.consume
        iterations[i] = res.iterations
        max_residual[i] = res.max_residual
        y, c = res.invest, res.consume
        rise = np.max(np.diff(value[i]))
        if rise > 1e-9:
            log.warning("V increases in z by %.3e at column t=%.4f", rise, col.t)
    invest[n] = invest[n - 1]
    consume[n, 1:-1] = consume[n - 1, 1:-1]
    return GridSolution(spec, grid, config, value, invest, consume, iterations, max_residual)
