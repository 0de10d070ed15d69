import os

import numpy as np
import pytest

from adasurv.core import TieConvention
from adasurv.dgp import TwinsDgp, compute_ground_truth, default_synthetic_dgp


def worker_count() -> int:
    return max(1, os.cpu_count() or 1)


@pytest.fixture(scope="session")
def syn_dgp():
    return default_synthetic_dgp(TieConvention.TIES)


@pytest.fixture(scope="session")
def twins_dgp():
    return TwinsDgp()


@pytest.fixture(scope="session")
def syn_truth(syn_dgp):
    return compute_ground_truth(syn_dgp)


@pytest.fixture(scope="session")
def twins_truth(twins_dgp):
    return compute_ground_truth(twins_dgp)


@pytest.fixture(scope="session")
def syn_grid():
    return np.linspace(0.0, 1.0, 21)
