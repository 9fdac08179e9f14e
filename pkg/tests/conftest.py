import time

import pytest

from fibham.band_enum import enumerate_bands

DEEP = 21  # covers at level 20 need sigma_21 as well
ENUM_SECONDS = {}  # lam -> wall time of the deep enumeration
ACCEPTANCE_LINES = []


def _deep(lam):
    t0 = time.perf_counter()
    h = enumerate_bands(lam, DEEP)
    ENUM_SECONDS[lam] = time.perf_counter() - t0
    return h


@pytest.fixture(scope="session")
def h8():
    return _deep(8)


@pytest.fixture(scope="session")
def h16():
    return _deep(16)


@pytest.fixture(scope="session")
def h32():
    return _deep(32)


@pytest.fixture(scope="session")
def h8_small():
    return enumerate_bands(8, 10)


def _transport(lam, T_grid):
    import warnings

    import numpy as np

    from fibham.dynamics import LatticeOperator, transport_exponents

    H = LatticeOperator(lam, 0.0, 2000)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = transport_exponents(H, (1, 2, 3, 4), list(np.geomspace(*T_grid)))
    return H, res, [w.category.__name__ for w in caught]


@pytest.fixture(scope="session")
def transport_free():
    """lam = 0 on 4001 sites, T from 10 to 100."""
    return _transport(0.0, (10.0, 100.0, 6))


@pytest.fixture(scope="session")
def transport_fib8():
    """lam = 8, theta = 0 on 4001 sites, T from 100 to 10^4."""
    return _transport(8.0, (100.0, 1e4, 7))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda x: x[:12]):
            terminalreporter.write_line(line)
