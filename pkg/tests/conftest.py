import numpy as np
import pytest

from gradflow.core_linear import DataMoments, WeightSetting


def random_theta(dims, rng, scale=0.7):
    return WeightSetting([scale * rng.standard_normal((dims[j], dims[j - 1])) for j in range(1, len(dims))])


def random_moments(dims, rng, unit=False):
    lam = rng.standard_normal((dims[-1], dims[0]))
    if unit:
        lam /= np.linalg.norm(lam)
    return DataMoments(lam, 0.0, unit)


def random_dims(rng, depths=(2, 3, 4), max_width=4):
    n = int(rng.choice(depths))
    return tuple(int(rng.integers(1, max_width + 1)) for _ in range(n + 1))


def rel_err(a, b):
    return abs(a - b) / max(1.0, abs(a), abs(b))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        ok, detail = results[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'} - {detail}")
