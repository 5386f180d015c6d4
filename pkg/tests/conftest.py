import numpy as np
import pytest

from neuacf.hin import Schema, build_graph


@pytest.fixture
def toy_schema():
    return Schema("UI", [("UI", "U", "I")])


@pytest.fixture
def toy_graph(toy_schema):
    return build_graph(toy_schema, {"UI": [(0, 0), (0, 1), (1, 0)]}, {"U": 2, "I": 2})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary -------------------------------------------------------------

_ACCEPTANCE = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        detail = getattr(item, "acceptance_detail", "")
        if report.skipped and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2]
        _ACCEPTANCE.append((marker.args[0], item.name, status, marker.args[1], detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, status, title, detail in sorted(_ACCEPTANCE, key=lambda r: (r[0], r[1])):
        line = f"[{status}] {number}. {title} ({name})"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)
