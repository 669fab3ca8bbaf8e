"""Shared pytest wiring.

The acceptance tests append their scorecard lines here; the terminal
summary hook replays them after the run so the per-criterion verdicts are
visible even when every test passes and stdout capture swallows prints.
"""

acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.line(line)
