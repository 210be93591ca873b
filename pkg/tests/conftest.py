import logging

import numpy as np
import pytest
from hypothesis import settings

from nmf_asymptotics import GaussianMeanZero, GaussianSpikeSlab, ProblemSpec, QuadratureScheme
from nmf_asymptotics.fixedpoint import solve

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

# independent scalar oracle for pi = pi* = N(0, 1), sigma2 = 1, alpha = 2:
# r = 1 / (1 + kappa*) solves r^2 - 5 r + 2 = 0, kappa* = tau*^2, eta' = r
R_ORACLE = (5 - np.sqrt(17)) / 2
KAPPA_ORACLE = (1 - R_ORACLE) / R_ORACLE
TAU2_ORACLE = KAPPA_ORACLE
B_ORACLE = np.sqrt(TAU2_ORACLE) * (1 - R_ORACLE / 2)
MSE_ORACLE = 2 * (TAU2_ORACLE - 1)


@pytest.fixture(autouse=True)
def _quiet_atom_warning(caplog):
    caplog.set_level(logging.ERROR, logger="nmf_asymptotics.predictions")


@pytest.fixture(scope="session")
def scheme():
    return QuadratureScheme()


@pytest.fixture(scope="session")
def ridge():
    return ProblemSpec(GaussianMeanZero(1.0), sigma2=1.0, alpha=2.0)


@pytest.fixture(scope="session")
def ridge_sol(ridge, scheme):
    return solve(ridge, scheme)


@pytest.fixture(scope="session")
def spike():
    return ProblemSpec(GaussianSpikeSlab(0.5, 0.2), sigma2=1.0, alpha=2.0)


@pytest.fixture(scope="session")
def spike_sol(spike, scheme):
    return solve(spike, scheme)
