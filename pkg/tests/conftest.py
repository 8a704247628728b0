import math

import numpy as np
import pytest

from hjmport.models import UtilityParams, make_cir, make_g2pp, make_vasicek

# criterion -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE_RESULTS: dict = {}


@pytest.fixture
def vasicek():
    return make_vasicek(beta=0.05, kappa=0.2, sigma=0.01, lambda_=0.1)


@pytest.fixture
def g2pp():
    return make_g2pp(kappa1=0.1, kappa2=0.5, sigma1=0.01, sigma2=0.02, rho=-0.5, lambda1=0.1, lambda2=0.1)


@pytest.fixture
def cir():
    return make_cir(beta=0.04, kappa=0.3, sigma=0.1, lambda_bar=0.2)


@pytest.fixture
def desk_util():
    return UtilityParams(alpha=0.5, gamma=0.02, a=1.0, b=1.0, horizon=5.0)


@pytest.fixture
def cir_util():
    return UtilityParams(alpha=-1.0, gamma=0.05, a=1.0, b=0.0, horizon=2.0)


@pytest.fixture
def infinite_util():
    return UtilityParams(alpha=0.5, gamma=0.2, a=1.0, b=0.0, horizon=math.inf)


@pytest.fixture(scope="session")
def acceptance():
    """Record one acceptance outcome and print its line."""

    def record(key, ok, detail):
        ACCEPTANCE_RESULTS[key] = (bool(ok), detail)
        print(f"\ncriterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
