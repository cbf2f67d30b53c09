import os

import numpy as np
import pytest
from hypothesis import settings

from adaptris import _kernels
from adaptris.model import make_model_1d

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session", autouse=True)
def _jit_warm():
    _kernels.warmup()


@pytest.fixture(scope="session")
def one_d():
    return make_model_1d()


@pytest.fixture(scope="session")
def run_1d(one_d):
    """Adaptive 1D trajectories keyed by tolerance, computed once per session."""
    from adaptris.scheme import adaptive_run

    cache = {}

    def get(tol):
        if tol not in cache:
            cache[tol] = adaptive_run(one_d, tol, 0.1)
        return cache[tol]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# -- acceptance summary ----------------------------------------------------
# Tests tagged ``@pytest.mark.criterion(n, text)`` get one pass/fail line each
# in the terminal summary.

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion")


def pytest_runtest_setup(item):
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        item.user_properties.append(("criterion", mark.args))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    number, text = props["criterion"]
    entry = _criteria.setdefault(number, {"text": text, "ok": True, "detail": ""})
    if report.failed or (report.when == "call" and not report.passed):
        entry["ok"] = False
    if report.when == "call" and "detail" in props:
        entry["detail"] = props["detail"]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        status = "PASS" if e["ok"] else "FAIL"
        line = f"criterion {number:>2}: {status}  {e['text']}"
        if e["detail"]:
            line += f"  [{e['detail']}]"
        terminalreporter.write_line(line)
