import warnings

import numpy as np
import pytest

from lrinfer.panel import Mode, ObservedPanel
from lrinfer.weights import DiversifiedWeights


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def masked_panel(rng, N, T, r=2, p=0.7, sigma=0.5, a=1.0):
    """Binary-mask panel with a rank-r truth; every row keeps >= 2 observations."""
    beta = a * rng.standard_normal((N, r))
    F = rng.standard_normal((T, r))
    M = beta @ F.T
    X = (rng.random((N, T)) < p).astype(float)
    X[:, :2] = 1.0
    Y = X * (M + sigma * rng.standard_normal((N, T)))
    return ObservedPanel(Y, X, Mode.BINARY), M, beta, F


def general_panel(rng, N, T, r=2, sigma=0.5):
    beta = rng.standard_normal((N, r))
    F = rng.standard_normal((T, r))
    M = beta @ F.T
    X = rng.uniform(0.5, 1.5, (N, T))
    Y = X * M + sigma * rng.standard_normal((N, T))
    return ObservedPanel(Y, X, Mode.GENERAL), M, beta, F


def random_weights(rng, N, T, R):
    return DiversifiedWeights(rng.standard_normal((N, R)), rng.standard_normal((T, R)))


def oracle_weights(rng, beta, F, R):
    N, r = beta.shape
    T = F.shape[0]
    return DiversifiedWeights(
        np.hstack([beta, rng.standard_normal((N, R - r))]),
        np.hstack([F, rng.standard_normal((T, R - r))]),
    )


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion and assert it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
