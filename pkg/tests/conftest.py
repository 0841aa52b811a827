"""Acceptance bookkeeping: tests tagged ``@pytest.mark.criterion(n)`` feed one
PASS/FAIL line per criterion into the terminal summary, with whatever
measurements they recorded through the ``measure`` fixture."""

import sys
from collections import defaultdict
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_OUTCOMES = defaultdict(list)
_DETAILS = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    rep = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _OUTCOMES[str(mark.args[0])].append(rep.passed)


@pytest.fixture
def measure(request):
    """``measure("text")`` attaches a measurement to the test's criterion line."""
    mark = request.node.get_closest_marker("criterion")
    key = str(mark.args[0]) if mark else "?"

    def note(text):
        _DETAILS[key].append(str(text))

    return note


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_OUTCOMES, key=lambda k: int(k)):
        status = "PASS" if all(_OUTCOMES[key]) else "FAIL"
        detail = "; ".join(_DETAILS.get(key, []))
        terminalreporter.write_line(f"criterion {key}: {status}  {detail}".rstrip())
