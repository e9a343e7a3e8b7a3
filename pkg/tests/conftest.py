import os

import pytest

from crossview_grpo import _kernels

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")

BACKENDS = sorted(_kernels.IMPLEMENTATIONS["tiou_many"])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def fixture_path():
    return lambda name: os.path.join(FIXTURES, name)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(criterion, ok, detail, elapsed):
        line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  ({elapsed:.2f}s)  {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
