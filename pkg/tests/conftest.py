"""Collects one pass/fail line per acceptance criterion and prints them at the end of the run."""
import re

ACCEPTANCE_LINES: dict[int, str] = {}

_CRITERION = re.compile(r"test_criterion_(\d+)_")


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m or (report.when != "call" and not report.failed):
        return
    n = int(m.group(1))
    if report.failed and n in ACCEPTANCE_LINES and ": PASS" in ACCEPTANCE_LINES[n]:
        ACCEPTANCE_LINES[n] = ACCEPTANCE_LINES[n].replace(": PASS", ": FAIL", 1)
    elif report.failed and n not in ACCEPTANCE_LINES:
        msg = str(report.longrepr).strip().splitlines()[-1] if report.longrepr else "error"
        ACCEPTANCE_LINES[n] = f"criterion {n}: FAIL ({msg[:160]})"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
