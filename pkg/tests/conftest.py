from __future__ import annotations

import pytest

_CRITERIA: list[str] = []


@pytest.fixture
def report_criterion():
    """Record a one-line acceptance verdict, echoed in the terminal summary."""

    def _report(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        print(line)
        _CRITERIA.append(line)

    return _report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
