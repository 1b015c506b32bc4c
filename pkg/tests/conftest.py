import pytest

from mergelab.experiment import Recipe, train_base_models

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture(scope="session")
def default_bases():
    """Default-recipe base models at seed 1, shared across modules."""
    return train_base_models(Recipe(), seed=1)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not (report.when == "call" or report.failed):
        return
    number, title = marker.args
    detail = dict(report.user_properties).get("detail", "")
    if report.failed and report.longrepr is not None:
        detail = (detail + "; " if detail else "") + str(report.longrepr).strip().splitlines()[-1]
    _ACCEPTANCE[number] = (title, report.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, detail = _ACCEPTANCE[number]
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)
