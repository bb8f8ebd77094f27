"""Collects one pass/fail line per acceptance criterion and prints them after the run."""

import pytest

_LINES: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): an acceptance criterion with a printed verdict")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not (report.when == "call" or (report.when == "setup" and not report.passed)):
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    verdict = "PASS" if report.passed else "FAIL"
    line = f"{verdict}  {marker.args[0]}" + (f": {detail}" if detail else "")
    _LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
