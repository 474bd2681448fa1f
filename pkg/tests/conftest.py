import numpy as np
import pytest

from eventcrab.autodiff import precision


@pytest.fixture
def f64():
    with precision("f64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    marks = getattr(report, "criterion", None)
    if marks is None:
        return
    number, text = marks
    entry = _criteria.setdefault(number, {"text": text, "passed": 0, "failed": 0, "notes": []})
    if report.when == "call" or report.outcome == "failed":
        entry["passed" if report.outcome == "passed" else "failed"] += 1
    for name, value in report.user_properties:
        if name == "criterion_note" and report.when == "call":
            entry["notes"].append(value)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = (mark.args[0], mark.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        status = "PASS" if e["failed"] == 0 and e["passed"] > 0 else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status} - {e['text']} "
                                    f"({e['passed']} passed, {e['failed']} failed)")
        for note in e["notes"]:
            terminalreporter.write_line(f"    {note}")
