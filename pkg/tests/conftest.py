import json
from pathlib import Path

import pytest

from benchlib import Bench
from locklab.profile import HARDENED, VULNERABLE

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def golden():
    return json.loads((FIXTURES / "golden_vectors.json").read_text())


@pytest.fixture
def bench_factory():
    made = []

    def make(profile=VULNERABLE, **kw):
        b = Bench(profile, **kw)
        made.append(b)
        return b

    yield make
    for b in made:
        b.close()


@pytest.fixture
def vuln(bench_factory):
    return bench_factory(VULNERABLE)


@pytest.fixture
def hard(bench_factory):
    return bench_factory(HARDENED)


# -- acceptance summary -----------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    n, title = mark.args
    if rep.failed or (rep.when == "call" and n not in _ACCEPTANCE):
        _ACCEPTANCE[n] = (title, "FAIL" if rep.failed else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, verdict = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {verdict}  {title}")
