import sys

import numpy as np
import pytest

from pathnewton.synthetic import random_instance, t1


def rel_close(a, b, tol):
    """|a - b| <= tol * max(1, |a|, |b|)."""
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


@pytest.fixture
def T1():
    return t1()


@pytest.fixture
def x11():
    return np.array([1.0, 1.0])


@pytest.fixture(params=range(8), ids=lambda i: f"rand{i}")
def random_case(request):
    return random_instance(request.param)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.format_result(n))
