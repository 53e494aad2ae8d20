import numpy as np
import pytest

from couette.lattice import Params

ACCEPTANCE_RESULTS: dict = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[number] = (title, ok, detail)
    print(f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number}. {title}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def default_params():
    return Params(S=8, W=128, lam=1.0, lam1=1.0, beta=1.0, eps=0.0, rho=0.5)
