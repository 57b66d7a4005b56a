import pytest

# criterion number -> {part label: all runs passed}
_RESULTS: dict[int, dict[str, bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, label): acceptance criterion part checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, label = marker.args
        parts = _RESULTS.setdefault(number, {})
        parts[label] = parts.get(label, True) and report.outcome == "passed"


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        parts = _RESULTS[number]
        verdict = "PASS" if all(parts.values()) else "FAIL"
        detail = "; ".join(f"{label} [{'pass' if ok else 'FAIL'}]" for label, ok in parts.items())
        terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {detail}")
