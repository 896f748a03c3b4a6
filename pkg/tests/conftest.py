import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """``criterion(name, ok, detail)`` prints one PASS/FAIL line and asserts ``ok``."""

    def check(name, ok, detail):
        line = f"{name}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        assert ok, line

    def skip(name, reason):
        line = f"{name}: SKIP - {reason}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        pytest.skip(line)

    check.skip = skip
    return check


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
