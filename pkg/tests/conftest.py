import pytest

from sdnhandover.core import InterfaceDesc, IpAddress, MacAddress


@pytest.fixture
def if_a():
    return InterfaceDesc(MacAddress.parse("02:00:00:00:02:01"), IpAddress.parse("10.0.0.1/24"), 5001)


@pytest.fixture
def if_b():
    return InterfaceDesc(MacAddress.parse("02:00:00:00:02:02"), IpAddress.parse("10.0.0.2/24"), 5001)


_CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    if report.failed or number not in _CRITERIA:
        _CRITERIA[number] = (title, "FAIL" if report.failed else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, verdict = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {title}")
