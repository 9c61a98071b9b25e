"""Closed-form ground truth on explicit quadratics and the theoretical bound checkers.

Train loss ``0.5 p'Ap + b'p``, test loss ``0.5 p'Tp + c'p``. With
``P = (A + lam I)^-1`` the inner minimizer is ``P (lam theta - b)`` and the
implicit Jacobian is ``lam P``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .errors import OracleError
from .models import InnerObjective, Model

MAX_DENSE_DIM = 200


@dataclass(frozen=True)
class AnalysisConstants:
    """Regularity constants of one task.

    B : Lipschitz constant of the test loss on the relevant ball.
    L : smoothness of the test loss.
    rho : Lipschitz constant of the train-loss Hessian.
    mu, beta : strong convexity and smoothness of G.
    D : bound on the norm of the inner minimizer.
    """
    B: float
    L: float
    rho: float
    mu: float
    beta: float
    D: float
    lam: float

    def __post_init__(self):
        if not self.mu > 0:
            raise OracleError(f"mu must be positive, got {self.mu}")
        if self.beta < self.mu:
            raise OracleError(f"beta ({self.beta}) must be >= mu ({self.mu})")
        for name in ("B", "L", "rho", "D", "lam"):
            if getattr(self, name) < 0:
                raise OracleError(f"{name} must be nonnegative")

    @property
    def kappa(self):
        return self.beta / self.mu


@dataclass(frozen=True, eq=False)
class ExactMetaGrad:
    g: np.ndarray
    phi: np.ndarray


def _payload(task):
    if task.quadratic is None:
        raise OracleError(f"task {task.id} has no explicit quadratic payload")
    return task.quadratic


def _solve(m, rhs):
    try:
        out = np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError as err:
        raise OracleError(f"singular system: {err}") from err
    if not np.all(np.isfinite(out)):
        raise OracleError("singular system: non-finite solution")
    return out


def _shifted(a, lam):
    return a + lam * np.eye(a.shape[0])


def exact_inner_solution(task, theta, lam):
    """Dense solve of ``(A + lam I) phi = lam theta - b``."""
    q = _payload(task)
    return _solve(_shifted(q.A, lam), lam * np.asarray(theta, dtype=float) - q.b)


def outer_gradient(task, phi):
    q = _payload(task)
    return q.A_test @ phi + q.b_test


def outer_value(task, phi):
    q = _payload(task)
    return float(0.5 * phi @ q.A_test @ phi + q.b_test @ phi)


def exact_meta_gradient(task, theta, lam):
    """``lam (A + lam I)^-1 grad L_test(phi*)`` together with ``phi*``."""
    q = _payload(task)
    phi = exact_inner_solution(task, theta, lam)
    g = lam * _solve(_shifted(q.A, lam), outer_gradient(task, phi))
    return ExactMetaGrad(g, phi)


def quadratic_constants(task, theta, lam):
    """Exact constants for one quadratic task at ``theta``.

    ``D`` is ``||phi*||`` and ``B`` the test-gradient norm bound on the ball
    of that radius; ``rho`` is zero since the Hessian is constant.
    """
    q = _payload(task)
    ev = np.linalg.eigvalsh(q.A)
    ev_test = np.linalg.eigvalsh(q.A_test)
    phi = exact_inner_solution(task, theta, lam)
    d = float(np.linalg.norm(phi))
    lip = float(np.max(np.abs(ev_test)))
    return AnalysisConstants(B=lip * d + float(np.linalg.norm(q.b_test)), L=lip, rho=0.0,
                             mu=float(ev[0]) + lam, beta=float(ev[-1]) + lam, D=d,
                             lam=float(lam))


def dense_hessian(graph, params, data):
    """Hessian assembled column by column from Hessian-vector products."""
    params = np.asarray(params, dtype=float)
    d = params.shape[0]
    if d > MAX_DENSE_DIM:
        raise OracleError(f"dense oracle capped at d <= {MAX_DENSE_DIM}, got {d}")
    tape = Tape(graph, params, data)
    eye = np.eye(d)
    return np.column_stack([tape.hvp(eye[:, j]) for j in range(d)])


def implicit_jacobian_dense(model, task, phi, lam):
    """``(I + H/lam)^-1`` with H the train-loss Hessian at ``phi``."""
    h = dense_hessian(model.graph, phi, task.batch("train"))
    d = h.shape[0]
    return _solve(np.eye(d) + h / lam, np.eye(d))


def perturb_and_resolve_jacobian(inner_solution, theta, h=1e-5):
    """Central-difference Jacobian of ``theta -> inner_solution(theta)``."""
    theta = np.asarray(theta, dtype=float)
    cols = []
    for j in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[j] = h
        cols.append((inner_solution(theta + e) - inner_solution(theta - e)) / (2 * h))
    return np.column_stack(cols)


@dataclass(frozen=True, eq=False)
class FDResult:
    g: np.ndarray
    h: float
    inaccurate_inner: bool


def finite_difference_meta_gradient(outer_loss, theta, h=1e-5, inner_accuracy=0.0):
    """Coordinate-wise central differences of ``theta -> outer_loss(theta)``.

    ``outer_loss`` must solve the inner problem itself. When the declared
    ``inner_accuracy`` exceeds ``h**2`` the differences are dominated by
    solver error and ``inaccurate_inner`` is set.
    """
    if not h > 0:
        raise OracleError("finite-difference step h must be positive")
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for j in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[j] = h
        g[j] = (outer_loss(theta + e) - outer_loss(theta - e)) / (2 * h)
    return FDResult(g, h, inner_accuracy > h * h)


def quadratic_outer_loss(task, lam):
    """``theta -> L_test(phi*(theta))`` with an exact inner solve."""
    return lambda theta: outer_value(task, exact_inner_solution(task, theta, lam))


def unrolled_gd_meta_gradient_dense(task, theta, lam, steps, alpha):
    """Derivative of ``L_test`` through ``steps`` GD steps on G, with dense Jacobians.

    ``J_{k+1} = (I - alpha (A + lam I)) J_k + alpha lam I`` from ``J_0 = I``.
    """
    q = _payload(task)
    d = q.dim
    eye = np.eye(d)
    step = eye - alpha * _shifted(q.A, lam)
    theta = np.asarray(theta, dtype=float)
    phi = theta.copy()
    jac = eye.copy()
    for _ in range(steps):
        phi = phi - alpha * (q.A @ phi + q.b + lam * (phi - theta))
        jac = step @ jac + alpha * lam * eye
    return jac.T @ outer_gradient(task, phi), phi


def lemma2_iteration_bound(consts, delta, x_norm):
    """``ceil(2 sqrt(kappa) log(2 kappa ||x*|| / delta))``, clamped at 0.

    The AGD iteration count after which ``||x - x*|| <= delta`` is
    guaranteed when started at the origin.
    """
    if not delta > 0:
        raise OracleError("delta must be positive")
    if x_norm <= 0:
        return 0
    kappa = consts.kappa
    val = 2.0 * math.sqrt(kappa) * math.log(2.0 * kappa * x_norm / delta)
    return max(0, math.ceil(val))


def lemma3_coefficient(consts):
    """``2 lam rho B / mu^2 + lam L / mu``."""
    c = consts
    return 2.0 * c.lam * c.rho * c.B / c.mu ** 2 + c.lam * c.L / c.mu


def lemma3_error_bound(consts, delta, delta_prime):
    """Worst-case meta-gradient error from inner error ``delta`` and CG error ``delta_prime``.

    Raises
    ------
    OracleError
        If ``rho > 0`` and ``delta >= mu / (2 rho)``; the bound needs
        ``delta < mu / (2 rho)``.
    """
    if delta < 0 or delta_prime < 0:
        raise OracleError("delta and delta' must be nonnegative")
    if consts.rho > 0 and not delta < consts.mu / (2.0 * consts.rho):
        raise OracleError(f"bound requires delta < mu/(2 rho) = "
                          f"{consts.mu / (2.0 * consts.rho):.6g}, got delta={delta:.6g}")
    return lemma3_coefficient(consts) * delta + delta_prime


def corollary1_call_bound(m, l_f, f0, f_min, eps):
    """Engine-call budget ``4 M L_F (F(0) - min F) / eps^2`` for reaching ``||grad F|| <= eps``."""
    if not eps > 0:
        raise OracleError("eps must be positive")
    return 4.0 * m * l_f * (f0 - f_min) / eps ** 2


class QuadraticFamilyObjective:
    """Meta-objective ``F(theta) = mean_i L_test_i(phi_i*(theta))`` over quadratic tasks.

    ``phi_i* = J_i theta + r_i`` is affine, so F is an explicit quadratic.
    """

    def __init__(self, tasks, lam):
        if not tasks:
            raise OracleError("need at least one task")
        self.lam = float(lam)
        d = _payload(tasks[0]).dim
        hess = np.zeros((d, d))
        lin = np.zeros(d)
        const = 0.0
        for task in tasks:
            q = _payload(task)
            shifted = _shifted(q.A, lam)
            jac = lam * _solve(shifted, np.eye(d))
            r = -_solve(shifted, q.b)
            hess += jac.T @ q.A_test @ jac
            lin += jac.T @ (q.A_test @ r + q.b_test)
            const += 0.5 * r @ q.A_test @ r + q.b_test @ r
        m = len(tasks)
        self.hessian = 0.5 * (hess + hess.T) / m
        self.linear = lin / m
        self.const = const / m
        self.count = m

    def value(self, theta):
        theta = np.asarray(theta, dtype=float)
        return float(0.5 * theta @ self.hessian @ theta + self.linear @ theta + self.const)

    def gradient(self, theta):
        return self.hessian @ np.asarray(theta, dtype=float) + self.linear

    @property
    def smoothness(self):
        return float(np.linalg.eigvalsh(self.hessian)[-1])

    def minimizer(self):
        return _solve(self.hessian, -self.linear)

    def minimum(self):
        return self.value(self.minimizer())


def verify_suite(tasks, lam, theta=None, h=1e-5):
    """Run the oracle identities on ``tasks``; returns one record per check."""
    checks = []

    def record(name, value, tol):
        checks.append({"check": name, "value": float(value), "tol": tol,
                       "passed": bool(value < tol)})

    for task in tasks:
        d = _payload(task).dim
        th = np.zeros(d) if theta is None else np.asarray(theta, dtype=float)
        model = Model("quadratic", dim=d)
        ex = exact_meta_gradient(task, th, lam)
        obj = InnerObjective(model, task, th, lam)
        record(f"{task.id}:stationarity", np.linalg.norm(obj.gradient(ex.phi)), 1e-10)
        jac = implicit_jacobian_dense(model, task, ex.phi, lam)
        closed = lam * np.linalg.inv(_shifted(task.quadratic.A, lam))
        record(f"{task.id}:jacobian_identity",
               np.linalg.norm(jac - closed) / np.linalg.norm(closed), 1e-10)
        fd = finite_difference_meta_gradient(quadratic_outer_loss(task, lam), th, h)
        record(f"{task.id}:finite_difference",
               np.linalg.norm(fd.g - ex.g) / max(np.linalg.norm(ex.g), 1e-300), 1e-6)
        num = perturb_and_resolve_jacobian(
            lambda t, task=task: exact_inner_solution(task, t, lam), th, h)
        record(f"{task.id}:perturb_resolve",
               np.linalg.norm(num - jac) / np.linalg.norm(jac), 1e-5)
        reptile = th - ex.phi
        record(f"{task.id}:proximal_identity",
               np.linalg.norm(reptile - (task.quadratic.A @ ex.phi + task.quadratic.b) / lam),
               1e-9)
    return checks
