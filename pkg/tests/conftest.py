"""Shared pytest hooks.

Tests in ``test_acceptance.py`` named ``test_criterion_NN_<slug>`` are
summarized at the end of the run with one PASS/FAIL line each.
"""

import re

_CRITERIA = {}
_NAME = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_runtest_logreport(report):
    m = _NAME.search(report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2))
    if report.when == "call" or report.failed:
        prev = _CRITERIA.get(key)
        if prev is None or prev[0] == "PASS":
            _CRITERIA[key] = ("PASS" if report.passed else "FAIL", report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for (num, slug), (status, secs) in sorted(_CRITERIA.items()):
        tr.write_line(f"criterion {num:2d}  {status}  {slug.replace('_', ' ')}  ({secs:.1f} s)")
