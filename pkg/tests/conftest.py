import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brute_knn(points, queries, k):
    """Indices of the k nearest points, ties by index (O(n*m) scan)."""
    points = np.asarray(points, dtype=np.float64)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    out = []
    for q in queries:
        d2 = [float(((p - q) ** 2).sum()) for p in points]
        out.append(sorted(range(len(points)), key=lambda i: (d2[i], i))[: min(k, len(points))])
    return np.array(out, dtype=np.int64)


# acceptance results, printed once at the end of the run
ACCEPTANCE: dict[str, str] = {}


def record(criterion: str, status: str, detail: str) -> None:
    ACCEPTANCE[criterion] = f"{status:4s} {criterion}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[1].rstrip(":"))):
        terminalreporter.write_line(ACCEPTANCE[key])
