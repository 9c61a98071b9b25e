import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from imaml.errors import ConfigError, DescentError, DivergenceError
from imaml.inner_solvers import InnerBudget, line_search, solve, solve_agd, solve_gd, \
    solve_newton_cg
from imaml.models import InnerObjective, Model
from imaml.oracle import exact_inner_solution
from imaml.tasks import QuadraticPayload, Task, make_quadratic_task


def quad_obj(task, theta, lam):
    return InnerObjective(Model("quadratic", dim=task.quadratic.dim), task, theta, lam)


def test_gd_one_step_on_1d_quadratic():
    task = make_quadratic_task(1, 1.0, seed=0)
    lam, theta = 3.0, np.array([0.7])
    obj = quad_obj(task, theta, lam)
    res = solve_gd(obj, budget=InnerBudget(steps=1, lr=1.0 / (1.0 + lam)))
    m = (lam * theta - task.quadratic.b) / (1.0 + lam)
    np.testing.assert_allclose(res.phi, m, atol=1e-12)


def test_gd_zero_steps_returns_init(quad5):
    obj = quad_obj(quad5, np.ones(5), 2.0)
    init = np.arange(5.0)
    res = solve_gd(obj, init, InnerBudget(steps=0))
    np.testing.assert_array_equal(res.phi, init)
    assert res.iterations == 0 and res.grad_evals == 1


def test_gd_reaches_delta_within_standard_count():
    task = make_quadratic_task(50, 50.0, seed=1)
    lam, delta = 5.0, 1e-8
    theta = np.zeros(50)
    obj = quad_obj(task, theta, lam)
    mu, beta = obj.spectrum()
    phi_star = exact_inner_solution(task, theta, lam)
    steps = math.ceil(beta / mu * math.log(np.linalg.norm(theta - phi_star) / delta))
    res = solve_gd(obj, budget=InnerBudget(steps=steps))
    assert np.linalg.norm(res.phi - phi_star) < delta


@pytest.mark.parametrize("steps", [0, 1, 7, 30])
def test_gd_counters(quad5, steps):
    res = solve_gd(quad_obj(quad5, np.zeros(5), 1.0), budget=InnerBudget(steps=steps))
    assert res.grad_evals == steps + 1 and res.hvps == 0 and res.iterations == steps


def test_gd_early_stop_certificate(quad5):
    obj = quad_obj(quad5, np.zeros(5), 1.0)
    res = solve_gd(obj, budget=InnerBudget(steps=1000, target_delta=1e-6))
    assert res.iterations < 1000
    assert np.linalg.norm(res.phi - exact_inner_solution(quad5, np.zeros(5), 1.0)) <= 1e-6
    assert res.delta_bound <= 1e-6


def test_gd_needs_lr_off_quadratics(sinusoid_task):
    model = Model("mlp", widths=[1, 4, 1])
    obj = InnerObjective(model, sinusoid_task, model.init_params(0), 1.0)
    with pytest.raises(ConfigError):
        solve_gd(obj, budget=InnerBudget(steps=2))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_gd_divergence_names_step(quad5):
    obj = quad_obj(quad5, np.ones(5), 1.0)
    with pytest.raises(DivergenceError) as info:
        solve_gd(obj, budget=InnerBudget(steps=2000, lr=10.0))
    assert info.value.step is not None


def test_agd_identity_hessian_within_bound():
    d, lam, delta = 4, 1.0, 1e-10
    q = QuadraticPayload(np.eye(d), np.arange(1.0, d + 1), np.eye(d), np.zeros(d))
    task = Task("eye", "quadratic", quadratic=q)
    obj = quad_obj(task, np.zeros(d), lam)
    phi_star = exact_inner_solution(task, np.zeros(d), lam)
    bound = math.ceil(2 * math.log(2 * np.linalg.norm(phi_star) / delta))
    res = solve_agd(obj, budget=InnerBudget(method="agd", steps=bound))
    assert np.linalg.norm(res.phi - phi_star) <= delta


@pytest.mark.parametrize("seed", range(5))
def test_agd_kappa50_within_bound(seed):
    task = make_quadratic_task(20, 50.0, seed=seed)
    lam, delta = 0.5, 1e-6
    obj = quad_obj(task, np.zeros(20), lam)
    mu, beta = obj.spectrum()
    kappa = beta / mu
    phi_star = exact_inner_solution(task, np.zeros(20), lam)
    bound = math.ceil(2 * math.sqrt(kappa) * math.log(2 * kappa * np.linalg.norm(phi_star) / delta))
    res = solve_agd(obj, budget=InnerBudget(method="agd", steps=bound))
    assert np.linalg.norm(res.phi - phi_star) <= delta


def test_agd_loose_target_returns_immediately(quad5):
    obj = quad_obj(quad5, np.zeros(5), 1.0)
    res = solve_agd(obj, budget=InnerBudget(method="agd", steps=50, target_delta=1e6))
    assert res.iterations == 0
    np.testing.assert_array_equal(res.phi, np.zeros(5))
    assert res.grad_evals == 1


def test_agd_needs_constants(sinusoid_task):
    model = Model("mlp", widths=[1, 4, 1])
    obj = InnerObjective(model, sinusoid_task, model.init_params(0), 1.0)
    with pytest.raises(ConfigError):
        solve_agd(obj, budget=InnerBudget(method="agd", steps=3))
    with pytest.raises(ConfigError):
        solve_agd(obj, budget=InnerBudget(method="agd", steps=3, mu=2.0, beta=1.0))


def test_newton_cg_exact_on_small_quadratic(quad5):
    theta = np.linspace(-1, 1, 5)
    obj = quad_obj(quad5, theta, 0.5)
    res = solve_newton_cg(obj, budget=InnerBudget(method="newton-cg", cg_steps=5,
                                                   newton_reps=1))
    np.testing.assert_allclose(res.phi, exact_inner_solution(quad5, theta, 0.5), atol=1e-8)
    assert res.diagnostics["line_search_failed"] is False
    assert res.hvps <= 5


def test_newton_cg_stationary_start_costs_no_hvps():
    q = QuadraticPayload(np.diag([1.0, 2.0]), np.zeros(2), np.eye(2), np.zeros(2))
    obj = quad_obj(Task("z", "quadratic", quadratic=q), np.zeros(2), 1.0)
    res = solve_newton_cg(obj, budget=InnerBudget(method="newton-cg"))
    np.testing.assert_array_equal(res.phi, np.zeros(2))
    assert res.hvps == 0 and res.grad_evals == 1


def test_newton_cg_monotone_on_mlp(sinusoid_task):
    model = Model("mlp", widths=[1, 20, 20, 1])
    obj = InnerObjective(model, sinusoid_task, model.init_params(3), 2.0)
    res = solve_newton_cg(obj, budget=InnerBudget(method="newton-cg", newton_reps=5))
    values = res.diagnostics["values"]
    assert len(values) >= 2
    assert all(b <= a for a, b in zip(values, values[1:]))


class Scalar:
    """Tiny objective exposing only ``value`` for line-search tests."""

    def __init__(self, f):
        self.f = f

    def value(self, phi, meter=None):
        return self.f(phi)


def test_line_search_newton_step_accepted():
    obj = Scalar(lambda x: float(2.0 * (x[0] - 1.0) ** 2))
    x = np.array([3.0])
    res = line_search(obj, x, np.array([-2.0]), np.array([8.0]))
    assert res.step == 1.0 and res.accepted


def test_line_search_backtracks_on_quartic():
    obj = Scalar(lambda x: float(x[0] ** 4))
    x = np.array([1.0])
    res = line_search(obj, x, np.array([-4.0]), np.array([4.0]))
    assert res.step < 1.0 and res.accepted
    assert obj.value(x + res.step * np.array([-4.0])) < obj.value(x)


def test_line_search_rejects_non_descent():
    obj = Scalar(lambda x: float(x @ x))
    with pytest.raises(DescentError):
        line_search(obj, np.ones(2), np.zeros(2), np.ones(2))
    with pytest.raises(DescentError):
        line_search(obj, np.ones(2), np.ones(2), np.ones(2))


def test_line_search_exhaustion_is_flagged_not_raised():
    obj = Scalar(lambda x: 0.0 if x[0] == 0.0 else 1.0)
    res = line_search(obj, np.zeros(1), np.ones(1), -np.ones(1))
    assert not res.accepted and res.step == 0.5 ** 30


@given(st.sampled_from(["gd", "agd", "newton-cg"]), st.integers(0, 10 ** 6),
       st.integers(0, 40))
def test_gradient_norm_never_grows_on_quadratics(method, seed, steps):
    task = make_quadratic_task(6, 20.0, seed)
    theta = np.random.default_rng(seed).standard_normal(6)
    obj = quad_obj(task, theta, 1.0)
    g0 = np.linalg.norm(obj.gradient(theta))
    res = solve(obj, InnerBudget(method=method, steps=steps, newton_reps=min(steps, 3)))
    assert res.grad_norm <= g0 * (1 + 1e-12)


def test_budget_validation():
    with pytest.raises(ConfigError):
        InnerBudget(method="sgd")
    with pytest.raises(ConfigError):
        InnerBudget(steps=-1)
    with pytest.raises(ConfigError):
        InnerBudget(lr=0.0)
