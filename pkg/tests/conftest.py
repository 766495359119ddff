"""Collects the one-line verdicts of the acceptance criteria and prints them at the end of the run."""
import pytest

_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """``verdict(number, ok, detail)`` records one criterion result and returns ``ok``."""

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
