import pytest

from decumulation.domain import reference_problem
from decumulation.solver import Grid, solve


@pytest.fixture(scope="session")
def spec_half():
    """C2 = C1/2, kappa = 0.5: the reference scenario."""
    return reference_problem(0.5, 0.5)


@pytest.fixture(scope="session")
def spec_fixed():
    return reference_problem(1.0, 0.5)


@pytest.fixture(scope="session")
def sol_half(spec_half):
    return solve(spec_half)


@pytest.fixture(scope="session")
def sol_fixed(spec_fixed):
    return solve(spec_fixed)


@pytest.fixture(scope="session")
def coarse_grid(spec_half):
    return Grid.for_spec(spec_half, dt=0.25, n_space_interior=40)


@pytest.fixture(scope="session")
def coarse_half(spec_half, coarse_grid):
    return solve(spec_half, coarse_grid)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion and return the checker."""

    def report(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
