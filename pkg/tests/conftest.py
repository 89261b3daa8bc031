import re

import pytest

from ebmkit.cli import run
from ebmkit.csvio import read_csv

_CRITERION = re.compile(r"test_criterion_(\d+)_")
_outcomes = {}


@pytest.fixture
def cli(tmp_path):
    """Run the command line in a fresh directory; return ``{name: (comment, header, rows)}``."""

    def _run(*args, out=None):
        out = out or tmp_path
        paths = run(["--out", str(out), *map(str, args)])
        return {p.name: read_csv(p) for p in paths}

    return _run


def column(table, name, cast=float):
    _, header, rows = table
    j = header.index(name)
    return [cast(r[j]) if r[j] != "" else None for r in rows]


def summary(table):
    _, _, rows = table
    return {k: v for k, v in rows}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    key = int(m.group(1))
    failed = report.failed or (report.when == "call" and report.outcome != "passed")
    prev = _outcomes.get(key, True)
    if report.when == "call" or report.failed:
        _outcomes[key] = prev and not failed


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_outcomes):
        terminalreporter.write_line(f"criterion {key:2d}: {'PASS' if _outcomes[key] else 'FAIL'}")
