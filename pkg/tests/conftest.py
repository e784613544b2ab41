import numpy as np
import pytest

from gedg.grid import make_uniform_grid, project_initial
from gedg.integrate import StepControl, solve
from gedg.kernels import make_phi, separable_sum_kernel, truncate_kernel
from gedg.rhs import assemble_event_tensor

# Lines printed at the end of the session by test_acceptance.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def exp_ic(grid):
    return project_initial(lambda x: np.exp(-x), grid, antiderivative=lambda x: -np.exp(-x))


@pytest.fixture(scope="session")
def reference_problem():
    """Constant-in-(x, y) kernel e^{-z}, e^{-x} data, n = 16, N = 256."""
    kernel = separable_sum_kernel(1.0, make_phi("exp"))
    grid = make_uniform_grid(16.0, 256)
    tensor = assemble_event_tensor(truncate_kernel(kernel, grid.n), grid)
    return kernel, grid, tensor, exp_ic(grid)


@pytest.fixture(scope="session")
def reference_run(reference_problem):
    """RK4 with dt = 1e-3 to T = 1, outputs every 0.02; returns (trajectory, seconds)."""
    import time

    _, grid, tensor, d0 = reference_problem
    times = list(np.round(np.arange(1, 51) * 0.02, 12))
    t0 = time.perf_counter()
    traj = solve(tensor, grid, d0, 1.0, times, StepControl(method="rk4", dt=1e-3), cons_tol=1e-8)
    return traj, time.perf_counter() - t0
