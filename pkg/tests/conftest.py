import numpy as np
import pytest

from milattn import tensor_core as tc


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x`` (x is restored)."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat, gflat = x.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return out


def rel_err(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def analytic_grad(build, x: np.ndarray) -> np.ndarray:
    """Gradient of ``build(var) -> scalar Var`` at ``x`` via the tape."""
    g = tc.Graph()
    v = g.param("x", x)
    return tc.backward(g, build(v))["x"]


def scalar_value(build, x: np.ndarray) -> float:
    g = tc.Graph()
    return float(build(g.constant(x)).value)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- acceptance summary

_criteria: list[tuple[int, str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    if "criterion" in props:
        status = "PASS" if report.passed else "FAIL"
        _criteria.append((props["criterion"], props["title"], status, props.get("measured", "")))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, measured in sorted(_criteria):
        line = f"criterion {number} [{status}] {title}"
        terminalreporter.write_line(line + (f" | {measured}" if measured else ""))


@pytest.fixture
def criterion(request, record_property):
    """Tag an acceptance test; call ``criterion.measure(text)`` to log its numbers."""
    marker = request.node.get_closest_marker("criterion")
    number, title = marker.args
    record_property("criterion", number)
    record_property("title", title)

    class _Recorder:
        def measure(self, text):
            record_property("measured", text)

    return _Recorder()
