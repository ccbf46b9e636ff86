import numpy as np
import pytest
from hypothesis import settings

from restorer_guidance.numerics import make_rng
from restorer_guidance.schedule import linear_beta_schedule

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def sched():
    return linear_beta_schedule()


@pytest.fixture
def rng():
    return make_rng(1234)


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))
