import pytest

_OUTCOMES: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.fixture
def measured(request):
    """Attach a short summary of measured values to the current criterion."""
    marker = request.node.get_closest_marker("criterion")

    def note(text):
        if marker is not None:
            _OUTCOMES.setdefault(marker.args[0], {"title": marker.args[1]}).setdefault("notes", []).append(text)

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _OUTCOMES.setdefault(number, {"title": title})
    failed = report.failed or (report.when == "call" and report.skipped)
    if report.when == "call" or failed:
        entry["passed"] = entry.get("passed", True) and not failed


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        entry = _OUTCOMES[number]
        status = "PASS" if entry.get("passed") else "FAIL"
        notes = "; ".join(entry.get("notes", []))
        line = f"criterion {number:2d} {status}  {entry['title']}"
        terminalreporter.write_line(f"{line}  [{notes}]" if notes else line)
