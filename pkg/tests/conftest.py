"""Shared pytest plumbing for the suite.

The acceptance tests append one PASS/FAIL line each to ``ACCEPTANCE_VERDICTS``;
repeating them in the terminal summary turns a full run into a readable
go/no-go checklist even when every test passes.
"""

from __future__ import annotations

ACCEPTANCE_VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)
