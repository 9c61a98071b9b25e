import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from imaml.errors import OracleError
from imaml.models import InnerObjective, Model
from imaml.oracle import (AnalysisConstants, QuadraticFamilyObjective, corollary1_call_bound,
                          dense_hessian, exact_inner_solution, exact_meta_gradient,
                          finite_difference_meta_gradient, implicit_jacobian_dense,
                          lemma2_iteration_bound, lemma3_coefficient, lemma3_error_bound,
                          outer_gradient, perturb_and_resolve_jacobian, quadratic_constants,
                          quadratic_outer_loss, unrolled_gd_meta_gradient_dense, verify_suite)
from imaml.tasks import QuadraticPayload, Task, make_quadratic_task

from conftest import rel


def payload_task(a, b, a_test, b_test):
    return Task("custom", "quadratic", quadratic=QuadraticPayload(a, b, a_test, b_test))


def consts(**kw):
    base = dict(B=1.0, L=1.0, rho=0.0, mu=1.0, beta=1.0, D=1.0, lam=1.0)
    return AnalysisConstants(**{**base, **kw})


def test_zero_quadratic_term_gives_proximal_step(rng):
    b, theta = rng.standard_normal(4), rng.standard_normal(4)
    task = payload_task(np.zeros((4, 4)), b, np.eye(4), np.zeros(4))
    np.testing.assert_allclose(exact_inner_solution(task, theta, 2.5), theta - b / 2.5,
                               atol=1e-14)


def test_zero_linear_term_at_origin(quad5):
    q = quad5.quadratic
    task = payload_task(q.A, np.zeros(5), q.A_test, q.b_test)
    np.testing.assert_array_equal(exact_inner_solution(task, np.zeros(5), 1.0), np.zeros(5))


def test_exact_solution_is_stationary(quad5, rng):
    theta = rng.standard_normal(5)
    phi = exact_inner_solution(quad5, theta, 0.7)
    obj = InnerObjective(Model("quadratic", dim=5), quad5, theta, 0.7)
    assert np.linalg.norm(obj.gradient(phi)) < 1e-10


def test_singular_system_raises():
    task = payload_task(-np.eye(3), np.ones(3), np.eye(3), np.zeros(3))
    with pytest.raises(OracleError, match="singular"):
        exact_inner_solution(task, np.zeros(3), 1.0)


def test_zero_test_gradient_gives_zero_meta_gradient(quad5, rng):
    theta = rng.standard_normal(5)
    q = quad5.quadratic
    phi = exact_inner_solution(quad5, theta, 1.0)
    # test loss centred at phi*
    task = payload_task(q.A, q.b, q.A_test, -q.A_test @ phi)
    np.testing.assert_allclose(exact_meta_gradient(task, theta, 1.0).g, 0.0, atol=1e-12)


def test_zero_hessian_meta_gradient_is_test_gradient(rng):
    task = payload_task(np.zeros((3, 3)), rng.standard_normal(3), np.eye(3),
                        rng.standard_normal(3))
    ex = exact_meta_gradient(task, np.ones(3), 3.0)
    np.testing.assert_allclose(ex.g, outer_gradient(task, ex.phi), atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_exact_matches_finite_differences(seed):
    task = make_quadratic_task(5, 10.0, seed=seed)
    theta = np.random.default_rng(seed).standard_normal(5)
    fd = finite_difference_meta_gradient(quadratic_outer_loss(task, 1.3), theta, 1e-5)
    assert rel(fd.g, exact_meta_gradient(task, theta, 1.3).g) < 1e-6
    assert not fd.inaccurate_inner


def test_finite_difference_constant_loss_and_flags():
    fd = finite_difference_meta_gradient(lambda t: 4.0, np.ones(3), 1e-3, inner_accuracy=1e-3)
    np.testing.assert_array_equal(fd.g, np.zeros(3))
    assert fd.inaccurate_inner
    with pytest.raises(OracleError):
        finite_difference_meta_gradient(lambda t: 0.0, np.ones(2), 0.0)


def test_finite_difference_second_order():
    # quadratics are differenced exactly, so the order needs a curved loss
    def f(t):
        return float(np.sum(np.exp(t) + np.sin(3 * t)))

    theta = np.array([0.3, -0.4])
    exact = np.exp(theta) + 3 * np.cos(3 * theta)
    e1 = np.linalg.norm(finite_difference_meta_gradient(f, theta, 1e-2).g - exact)
    e2 = np.linalg.norm(finite_difference_meta_gradient(f, theta, 5e-3).g - exact)
    assert 3.8 < e1 / e2 < 4.2


def test_implicit_jacobian_zero_hessian():
    task = payload_task(np.zeros((4, 4)), np.ones(4), np.eye(4), np.zeros(4))
    jac = implicit_jacobian_dense(Model("quadratic", dim=4), task, np.zeros(4), 2.0)
    np.testing.assert_allclose(jac, np.eye(4), atol=1e-15)


@pytest.mark.parametrize("lam", [0.1, 1.0, 10.0])
def test_implicit_jacobian_algebraic_identity(quad5, lam):
    jac = implicit_jacobian_dense(Model("quadratic", dim=5), quad5, np.zeros(5), lam)
    closed = lam * np.linalg.inv(quad5.quadratic.A + lam * np.eye(5))
    assert np.linalg.norm(jac - closed) / np.linalg.norm(closed) < 1e-10


def test_implicit_jacobian_matches_perturb_and_resolve(quad5, rng):
    theta = rng.standard_normal(5)
    phi = exact_inner_solution(quad5, theta, 0.8)
    jac = implicit_jacobian_dense(Model("quadratic", dim=5), quad5, phi, 0.8)
    num = perturb_and_resolve_jacobian(lambda t: exact_inner_solution(quad5, t, 0.8), theta)
    assert np.linalg.norm(num - jac) / np.linalg.norm(jac) < 1e-5


def test_dense_hessian_cap():
    model = Model("quadratic", dim=201)
    task = make_quadratic_task(201, 2.0, seed=0)
    with pytest.raises(OracleError, match="200"):
        dense_hessian(model.graph, np.zeros(201), task.batch("train"))


def test_unrolled_dense_zero_steps_and_limit(quad5, rng):
    theta = rng.standard_normal(5)
    g0, phi0 = unrolled_gd_meta_gradient_dense(quad5, theta, 1.0, 0, 0.1)
    np.testing.assert_array_equal(phi0, theta)
    np.testing.assert_allclose(g0, outer_gradient(quad5, theta), atol=1e-14)
    ev = np.linalg.eigvalsh(quad5.quadratic.A) + 1.0
    g, _ = unrolled_gd_meta_gradient_dense(quad5, theta, 1.0, 2000, 2 / (ev[0] + ev[-1]))
    assert rel(g, exact_meta_gradient(quad5, theta, 1.0).g) < 1e-10


def test_agd_bound_unit_condition():
    assert lemma2_iteration_bound(consts(), 1e-3, 1e-3) == math.ceil(2 * math.log(2))


def test_agd_bound_recomputed():
    c = consts(mu=1.0, beta=50.0)
    expected = math.ceil(2 * math.sqrt(50) * math.log(2 * 50 * 10 / 1e-6))
    assert lemma2_iteration_bound(c, 1e-6, 10.0) == expected


def test_agd_bound_clamps_to_zero():
    c = consts(mu=1.0, beta=4.0)
    assert lemma2_iteration_bound(c, 2 * 4 * 0.5, 0.5) == 0
    assert lemma2_iteration_bound(c, 10.0, 0.5) == 0
    assert lemma2_iteration_bound(c, 1.0, 0.0) == 0
    with pytest.raises(OracleError):
        lemma2_iteration_bound(c, 0.0, 1.0)


def test_error_bound_quadratic_case():
    c = consts(L=3.0, mu=2.0, beta=5.0, lam=4.0)
    assert lemma3_error_bound(c, 0.1, 0.05) == pytest.approx(4.0 * 3.0 / 2.0 * 0.1 + 0.05,
                                                            rel=1e-15)
    assert lemma3_error_bound(c, 0.0, 0.0) == 0.0


def test_error_bound_curvature_term():
    c = consts(B=2.0, L=1.0, rho=0.5, mu=2.0, beta=3.0, lam=1.0)
    assert lemma3_coefficient(c) == pytest.approx(2 * 1.0 * 0.5 * 2.0 / 4.0 + 1.0 / 2.0)


@given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0, 100))
def test_error_bound_hypothesis_violation_named(mu, rho, excess):
    c = consts(mu=mu, beta=mu + 1.0, rho=rho)
    with pytest.raises(OracleError, match=r"mu/\(2 rho\)"):
        lemma3_error_bound(c, mu / (2 * rho) + excess, 0.0)


def test_analysis_constants_invariants():
    with pytest.raises(OracleError):
        consts(mu=0.0)
    with pytest.raises(OracleError):
        consts(mu=2.0, beta=1.0)
    with pytest.raises(OracleError):
        consts(B=-1.0)
    assert consts(mu=2.0, beta=6.0).kappa == 3.0


def test_quadratic_constants(quad5):
    c = quadratic_constants(quad5, np.zeros(5), 2.0)
    ev = np.linalg.eigvalsh(quad5.quadratic.A)
    assert c.rho == 0.0 and c.mu == pytest.approx(ev[0] + 2) and c.beta == pytest.approx(ev[-1] + 2)


def test_call_bound_arithmetic():
    assert corollary1_call_bound(8, 2.0, 3.0, 1.0, 0.1) == pytest.approx(4 * 8 * 2 * 2 / 0.01)
    with pytest.raises(OracleError):
        corollary1_call_bound(1, 1.0, 1.0, 0.0, 0.0)


def test_family_objective_matches_oracle():
    tasks = [make_quadratic_task(6, 8.0, seed=s) for s in range(4)]
    fam = QuadraticFamilyObjective(tasks, 1.5)
    theta = np.random.default_rng(0).standard_normal(6)
    mean_g = np.mean([exact_meta_gradient(t, theta, 1.5).g for t in tasks], axis=0)
    assert rel(fam.gradient(theta), mean_g) < 1e-12
    mean_f = np.mean([quadratic_outer_loss(t, 1.5)(theta) for t in tasks])
    assert fam.value(theta) == pytest.approx(mean_f, rel=1e-12)
    assert np.linalg.norm(fam.gradient(fam.minimizer())) < 1e-10
    assert fam.minimum() <= fam.value(theta)


def test_verify_suite_all_pass():
    tasks = [make_quadratic_task(5, 10.0, seed=s) for s in range(3)]
    checks = verify_suite(tasks, 2.0)
    assert len(checks) == 15 and all(c["passed"] for c in checks)
