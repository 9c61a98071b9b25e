import numpy as np
import pytest
from hypothesis import given, strategies as st

from imaml.errors import ConfigError
from imaml.tasks import (TaskDistribution, dumps, loads, make_quadratic_task, sample_tasks)


@pytest.mark.parametrize("d,kappa", [(2, 2.0), (10, 50.0), (50, 50.0)])
def test_quadratic_condition_number_exact(d, kappa):
    task = make_quadratic_task(d, kappa, seed=3)
    for a in (task.quadratic.A, task.quadratic.A_test):
        ev = np.linalg.eigvalsh(a)
        np.testing.assert_allclose([ev[0], ev[-1]], [1.0, kappa], rtol=1e-10)
        np.testing.assert_array_equal(a, a.T)


def test_one_dimensional_quadratic():
    task = make_quadratic_task(1, 1.0, seed=0)
    assert task.quadratic.A.shape == (1, 1)
    with pytest.raises(ConfigError):
        make_quadratic_task(1, 5.0, seed=0)


def test_sampling_is_deterministic_and_index_addressable():
    dist = TaskDistribution(kind="quadratic", dim=4, kappa=3.0)
    a = sample_tasks(dist, 5, seed=11)
    b = sample_tasks(dist, 3, seed=11)
    for x, y in zip(a, b):
        assert x.id == y.id
        np.testing.assert_array_equal(x.quadratic.A, y.quadratic.A)
    c = sample_tasks(dist, 1, seed=12)[0]
    assert not np.array_equal(a[0].quadratic.b, c.quadratic.b)


def test_sinusoid_shapes_and_disjoint_inputs():
    dist = TaskDistribution(kind="sinusoid", shots=10, test_shots=15)
    for task in sample_tasks(dist, 20, seed=0):
        assert task.train.x.shape == (10, 1) and task.test.y.shape == (15, 1)
        assert not np.intersect1d(task.train.x, task.test.x).size
        amp, phase = task.meta["amplitude"], task.meta["phase"]
        assert 0.1 <= amp <= 5.0 and 0.0 <= phase <= np.pi
        np.testing.assert_allclose(task.train.y, amp * np.sin(task.train.x + phase))
        assert np.all(np.abs(task.train.x) <= 5.0)


def test_gaussian_classes_balanced():
    dist = TaskDistribution(kind="gaussian-classes", dim=4, ways=3, shots=2, test_shots=5)
    task = sample_tasks(dist, 1, seed=0)[0]
    assert task.train.x.shape == (6, 4)
    np.testing.assert_array_equal(np.bincount(task.train.y), [2, 2, 2])
    np.testing.assert_array_equal(np.bincount(task.test.y), [5, 5, 5])


@pytest.mark.parametrize("kw", [dict(kind="omniglot"), dict(kappa=0.5), dict(ways=1),
                                dict(shots=0), dict(dim=0), dict(test_shots=0)])
def test_distribution_validation(kw):
    with pytest.raises(ConfigError):
        TaskDistribution(**kw)


@pytest.mark.parametrize("kind", ["quadratic", "sinusoid", "gaussian-classes"])
def test_json_round_trip(kind):
    dist = TaskDistribution(kind=kind, dim=3, kappa=4.0, ways=2, shots=3)
    tasks = sample_tasks(dist, 2, seed=5)
    back = loads(dumps(tasks))
    assert dumps(back) == dumps(tasks)
    for s in ("train", "test"):
        for k, v in tasks[0].batch(s).items():
            np.testing.assert_array_equal(back[0].batch(s)[k], v)


def test_empty_split_rejected():
    from imaml.tasks import Split, Task
    task = Task("t", "sinusoid", Split(np.zeros((0, 1)), np.zeros((0, 1))), None)
    with pytest.raises(ValueError):
        task.batch("train")
    with pytest.raises(ValueError):
        task.batch("test")


@given(st.integers(2, 8), st.floats(1.0, 100.0), st.integers(0, 10 ** 6))
def test_quadratic_is_positive_definite(d, kappa, seed):
    ev = np.linalg.eigvalsh(make_quadratic_task(d, kappa, seed).quadratic.A)
    assert ev[0] > 0.5 and ev[-1] / ev[0] == pytest.approx(kappa, rel=1e-8)
