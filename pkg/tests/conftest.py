import os

import pytest
from hypothesis import settings

settings.register_profile("pkg", max_examples=40, deadline=None)
settings.load_profile("pkg")

_ACCEPTANCE = []


@pytest.fixture
def acceptance_record():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    def record(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} -- {detail}"
        _ACCEPTANCE.append((number, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)


@pytest.fixture
def numpy_path(monkeypatch):
    monkeypatch.setenv("PCANET_NUMBA", "0")
    yield
