import pytest

from rhflow.flow import FlowConfig, run
from rhflow.heat import fundamental_solution

# (criterion number, passed, detail) appended by test_acceptance
ACCEPTANCE_RESULTS: list = []


@pytest.fixture(scope="session")
def round_hist_128():
    return run(FlowConfig(N=128, t_end=0.2, stride=4, dt_max=1e-4))


@pytest.fixture(scope="session")
def perturbed_hist_128():
    return run(FlowConfig(N=128, t_end=0.05, family="perturbed"))


@pytest.fixture(scope="session")
def round_kernel_128(round_hist_128):
    return fundamental_solution(round_hist_128, 0.2, 0.0, dt=4e-5, record_every=5)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
