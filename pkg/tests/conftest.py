import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from imaml.tasks import TaskDistribution, make_quadratic_task, sample_tasks

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def quad5():
    return make_quadratic_task(5, 10.0, seed=7)


@pytest.fixture
def sinusoid_task():
    return sample_tasks(TaskDistribution(kind="sinusoid", shots=10), 1, 0)[0]


@pytest.fixture
def classes_task():
    dist = TaskDistribution(kind="gaussian-classes", dim=3, ways=3, shots=4)
    return sample_tasks(dist, 1, 0)[0]


def rel(a, b):
    """Relative L2 distance of ``a`` from reference ``b``."""
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b)
