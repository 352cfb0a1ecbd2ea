import numpy as np
import pytest

from hybrid_trajopt.bench.ball import BouncingBallParams, bouncing_ball_system
from hybrid_trajopt.bench.batch import benchmark_cost


@pytest.fixture
def params():
    return BouncingBallParams()


@pytest.fixture
def ball(params):
    return bouncing_ball_system(params)


@pytest.fixture
def cost(params):
    return benchmark_cost(params)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Record and print one PASS/FAIL line per acceptance criterion, then assert."""

    def check(number: int, title: str, ok: bool, detail: str = ""):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        print(line)
        ACCEPTANCE_LINES.append(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
