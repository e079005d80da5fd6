from functools import lru_cache

import pytest

from trajmark.catalog import build
from trajmark.intersect import classify


@lru_cache(maxsize=None)
def catalog_set(cid: str):
    return build(cid).simulate()


@lru_cache(maxsize=None)
def catalog_report(cid: str):
    entry = build(cid)
    return classify(catalog_set(cid), model=entry.model)


@pytest.fixture
def cached_set():
    return catalog_set


@pytest.fixture
def cached_report():
    return catalog_report


# one PASS/FAIL line per acceptance criterion in the terminal summary
_acceptance = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.split("::")[-1]
    if "test_acceptance" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.when != "call" and report.outcome == "passed":
        return
    # parametrized cases of one criterion share a line
    parts = name.split("[")[0].split("_")
    num, label = int(parts[2]), " ".join(parts[3:])
    ok, _ = _acceptance.get(num, (True, label))
    _acceptance[num] = (ok and report.outcome == "passed", label)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_acceptance):
        ok, label = _acceptance[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {label}")
