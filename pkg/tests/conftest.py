import pathlib
import sys

import pytest

HERE = pathlib.Path(__file__).parent
FIXTURES = HERE / "fixtures"
sys.path.insert(0, str(HERE))

from chaselab.model import parse_instance, parse_program  # noqa: E402


def fixture_text(name):
    return (FIXTURES / name).read_text()


def prog(text):
    return parse_program(text)


def inst(text):
    return parse_instance(text)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


# one summary line per acceptance criterion, taken from the real test outcome
_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, text = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _CRITERIA[n] = (text, rep.outcome, round(rep.duration, 2))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        text, outcome, secs = _CRITERIA[n]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"CRITERION {n:>2}: {verdict} ({secs}s) {text}")
