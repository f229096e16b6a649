import numpy as np
import pytest

from hdpvfl.transport import InProcessChannel, tcp_pair


def _make_pair(kind, timeout=10.0):
    if kind == "inproc":
        return InProcessChannel.pair(timeout=timeout)
    return tcp_pair(timeout=timeout)


@pytest.fixture(params=["inproc", "tcp"])
def channel_kind(request):
    return request.param


@pytest.fixture
def channel_pair(channel_kind):
    a, p = _make_pair(channel_kind)
    yield a, p
    a.close()
    p.close()


@pytest.fixture
def make_pair():
    return _make_pair


def small_problem(rng, n=20, d_a=3, d_b=2, kind="logistic"):
    """Random vertically split problem with joint row norms at most 1."""
    X = rng.normal(size=(n, d_a + d_b))
    X /= np.max(np.linalg.norm(X, axis=1))
    w = rng.normal(size=d_a + d_b)
    if kind == "least_squares":
        y = np.clip(X @ w + 0.1 * rng.normal(size=n), -3, 3)
    else:
        y = np.where(X @ w + 0.1 * rng.normal(size=n) >= 0, 1.0, -1.0)
    return X[:, :d_a], X[:, d_a:], y


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
