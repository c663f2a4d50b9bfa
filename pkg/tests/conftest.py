"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

import pytest

_CRITERIA: dict[int, dict] = {}
_NODE_TO_CRITERION: dict[str, int] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is None:
            continue
        number, title = marker.args
        _NODE_TO_CRITERION[item.nodeid] = number
        _CRITERIA.setdefault(number, {"title": title, "outcomes": [], "measured": []})


def pytest_runtest_logreport(report):
    number = _NODE_TO_CRITERION.get(report.nodeid)
    if number is None:
        return
    entry = _CRITERIA[number]
    if report.failed:
        entry["outcomes"].append("failed")
    elif report.when == "call":
        entry["outcomes"].append(report.outcome)
        entry["measured"] += [str(v) for k, v in report.user_properties if k == "measured"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        outcomes = entry["outcomes"]
        if "failed" in outcomes:
            status = "FAIL"
        elif outcomes and all(o == "passed" for o in outcomes):
            status = "PASS"
        else:
            status = "NOT RUN"
        detail = f" ({'; '.join(entry['measured'])})" if entry["measured"] else ""
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {entry['title']}{detail}")


@pytest.fixture
def measured(record_property):
    """Attach a measured value to the criterion summary line."""

    def record(text: str) -> None:
        record_property("measured", text)

    return record
