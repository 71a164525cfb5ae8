"""Shared pytest plumbing: prints the acceptance scorecard after a run."""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    for name in ("test_acceptance", "tests.test_acceptance"):
        mod = sys.modules.get(name)
        if mod is not None and getattr(mod, "VERDICTS", None):
            terminalreporter.section("acceptance criteria")
            for num in sorted(mod.VERDICTS):
                terminalreporter.write_line(mod.VERDICTS[num])
            break
