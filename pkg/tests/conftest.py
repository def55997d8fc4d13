import numpy as np
import pytest

from optregime.simulation import DgpSpec, generate
from optregime.trajectory import MISSING, Dataset

ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def random_instance(rng, K, n, n_cov=1):
    """Small discrete dataset with arbitrary (positivity-respecting) laws."""
    L = [rng.integers(0, 2, size=(n, n_cov if t == 0 else int(rng.integers(0, 2)))) for t in range(K + 1)]
    R = np.zeros((n, K + 1), dtype=np.int64)
    S = np.zeros((n, K + 1), dtype=np.int64)
    A = np.zeros((n, K + 1), dtype=np.int64)
    for t in range(K + 1):
        S[:, t] = rng.random(n) < rng.uniform(0.2, 0.8)
        if t < K:
            A[:, t] = rng.random(n) < rng.uniform(0.2, 0.8)
            R[:, t + 1] = np.where(A[:, t] == 1, rng.integers(0, 2, n), MISSING)
    Yd = rng.normal(S.sum(axis=1) + L[0][:, 0], 1.0)
    return Dataset(L, R, S, A, Yd, c_star=0.5)


@pytest.fixture(scope="session")
def dgp1_small():
    return generate(DgpSpec("DGP1", n=4000, seed=5))


@pytest.fixture(scope="session")
def dgp2_small():
    return generate(DgpSpec("DGP2", n=6000, seed=5))
