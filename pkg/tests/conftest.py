import json
from pathlib import Path

import pytest

from contractengine.contract import validate_model

ROOT = Path(__file__).parent.parent
SCENARIOS = ROOT / "scenarios"


def scenario_doc(name):
    return json.loads((SCENARIOS / name).read_text())


@pytest.fixture(scope="session")
def building_models():
    return {k: validate_model(v) for k, v in scenario_doc("building.scn")["models"].items()}


# -- acceptance report ------------------------------------------------------------------

_acceptance: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one of the numbered acceptance criteria")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.failed):
        _acceptance[number] = (title, "PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, verdict = _acceptance[number]
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {title}")
