from __future__ import annotations

import numpy as np
import pytest

FD_STEP = 1e-5
FD_RTOL = 1e-4
# below this magnitude central differences are dominated by round-off
FD_ATOL = 1e-8


def central_difference(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Numerical gradient of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def assert_grad_close(analytic: np.ndarray, numeric: np.ndarray) -> None:
    err = np.abs(analytic - numeric)
    bound = FD_RTOL * np.maximum(np.abs(analytic), np.abs(numeric)) + FD_ATOL
    worst = np.max(err - bound) if err.size else -1
    assert np.all(err <= bound), f"gradient mismatch, worst excess {worst:.3e}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance reporting: tests marked criterion(n) roll up into one line per criterion
_CRITERIA: dict[int, list] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    n = dict(report.user_properties).get("criterion")
    if n is None:
        return
    details = [v for k, v in report.user_properties if k == "detail"]
    _CRITERIA.setdefault(n, []).append((report.outcome, details))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        runs = _CRITERIA[n]
        outcomes = {o for o, _ in runs}
        verdict = "FAIL" if "failed" in outcomes else "SKIP" if outcomes == {"skipped"} else "PASS"
        detail = "; ".join(d for _, ds in runs for d in ds)
        terminalreporter.write_line(f"criterion {n}: {verdict}" + (f"  ({detail})" if detail else ""))


@pytest.fixture
def criterion(request, record_property):
    """Tag the test with its acceptance criterion; call the result to attach a detail string."""
    marker = request.node.get_closest_marker("criterion")
    record_property("criterion", marker.args[0])
    return lambda text: record_property("detail", text)
