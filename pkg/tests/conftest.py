from __future__ import annotations

import sys
from pathlib import Path

import pytest

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE))

TOY = HERE / "fixtures" / "toy"

_criteria: dict[str, tuple[str, bool]] = {}


@pytest.fixture(scope="session")
def toy_dir() -> Path:
    return TOY


@pytest.fixture(scope="session")
def toy_passages():
    from convsim.index import read_collection

    return read_collection(TOY / "collection.tsv")


@pytest.fixture(scope="session")
def toy_index(toy_passages):
    from convsim.index import build_index

    return build_index(toy_passages)


def pytest_runtest_logreport(report):
    marker = report.keywords.get("criterion") if hasattr(report, "keywords") else None
    if marker is None or "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1].split("[")[0]
        key = name.split("_")[1].upper()
        prev = _criteria.get(key, (name, True))[1]
        _criteria[key] = (name, prev and report.outcome == "passed")


def pytest_collection_modifyitems(items):
    for item in items:
        if "test_acceptance.py" in item.nodeid and item.name.startswith("test_ac"):
            item.add_marker("criterion")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion: one acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria, key=lambda k: int(k[2:])):
        name, ok = _criteria[key]
        terminalreporter.write_line(f"{key:<5} {'PASS' if ok else 'FAIL'}  {name}")
