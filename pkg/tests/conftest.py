"""Shared pytest hooks: replay acceptance verdict lines in the summary.

The acceptance tests each record one ``[AC#] PASS/FAIL — detail`` line;
pytest captures in-test prints, so this hook re-emits the collected lines
after the run, where they are always visible.
"""
import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance") or sys.modules.get(
        "tests.test_acceptance"
    )
    verdicts = getattr(mod, "VERDICTS", None) if mod else None
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for line in verdicts:
            terminalreporter.write_line(line)
