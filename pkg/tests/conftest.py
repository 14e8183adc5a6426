import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_instance(rng, max_s=100, max_m=20, max_k=6, s=0.0, g=0.0):
    """Noise-controlled DINA instance drawn from ``rng``: (X, Q, profiles)."""
    n_s = int(rng.integers(1, max_s + 1))
    n_m = int(rng.integers(1, max_m + 1))
    n_k = int(rng.integers(1, max_k + 1))
    Q = (rng.random((n_m, n_k)) < 0.4).astype(np.int8)
    empty = Q.sum(axis=1) == 0
    Q[empty, rng.integers(0, n_k, size=int(empty.sum()))] = 1
    A = (rng.random((n_s, n_k)) < 0.5).astype(np.int8)
    xi = (A.astype(int) @ Q.T.astype(int)) == Q.sum(axis=1)
    p = np.where(xi, 1 - s, g)
    X = (rng.random(xi.shape) < p).astype(np.float64)
    return X, Q, A


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
