import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    detail = dict(item.user_properties).get("detail", "")
    results = item.config.stash.setdefault(_RESULTS, {})
    results[marker.args[0]] = ("PASS" if report.passed else "FAIL", detail)


_RESULTS = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        status, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}".rstrip())
