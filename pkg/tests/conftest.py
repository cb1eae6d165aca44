import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dualbarrier.systems import discrete_system

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_RESULTS = {}


def record_criterion(number, passed, detail=""):
    """Store one acceptance line; printed in the terminal summary."""
    ACCEPTANCE_RESULTS[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_instance(rng, K=None, m=None, N=None, complex_values=None, same=None):
    """Random finite-measure system: lower values, optional different upper values."""
    K = int(rng.integers(10, 201)) if K is None else K
    m = int(rng.integers(1, 9)) if m is None else m
    cplx = bool(rng.integers(2)) if complex_values is None else complex_values
    same = bool(rng.integers(2)) if same is None else same

    def draw(cols):
        v = rng.standard_normal((K, cols))
        if cplx:
            v = v + 1j * rng.standard_normal((K, cols))
        return v

    A = draw(m) * rng.uniform(0.3, 3.0, size=m)
    probs = rng.uniform(0.2, 1.0, size=K)
    if same:
        return discrete_system(A, probs=probs)
    N = int(rng.integers(1, 13)) if N is None else N
    B = draw(N) * rng.uniform(0.05, 2.0, size=N)
    return discrete_system(A, B, probs=probs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
