"""Shared pytest plumbing.

The acceptance tests report one human-readable line per criterion; the hook
below replays those lines in a dedicated section at the end of the run, so a
plain `pytest -v` shows the pass/fail ledger even though stdout from passing
tests is normally captured.
"""
import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion_report():
    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
