import os

# Envelope-descent assertions inside every PANOC step for the whole test run.
os.environ.setdefault("PENALTYNAV_CHECK_FBE", "1")

import numpy as np
import pytest

from penaltynav.kernels import available_backends, kernel_class

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture(params=available_backends())
def backend(request):
    """Kernel class for each available backend."""
    return kernel_class(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for an acceptance criterion: ``criterion(n, detail)``."""
    state = {}

    def note(number: int, detail: str):
        state["n"] = number
        state["detail"] = detail

    yield note
    if "n" in state:
        rep = getattr(request.node, "rep_call", None)
        ok = rep is not None and rep.passed
        _ACCEPTANCE[state["n"]] = ("PASS" if ok else "FAIL", state["detail"])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        status, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}")
