import pytest

from mmist.backends import toy_backends
from mmist.backends.instrumented import counting


@pytest.fixture(scope="session")
def backends():
    return toy_backends(0)


@pytest.fixture
def counted():
    return counting(toy_backends(0))


@pytest.fixture
def cache_root(tmp_path, monkeypatch):
    root = tmp_path / "cache"
    monkeypatch.setenv("MMIST_CACHE_ROOT", str(root))
    return root


@pytest.fixture(scope="session")
def descent_runs(backends):
    from helpers import descent_suite

    return descent_suite(backends)


_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    _, ok = _CRITERIA.get(n, (title, True))
    if report.failed or report.skipped or (report.when == "call" and not report.passed):
        ok = False
    _CRITERIA[n] = (title, ok)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}")
