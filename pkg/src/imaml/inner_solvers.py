"""Approximate minimizers of the proximal inner objective G.

All solvers start at ``init`` (the proximal centre theta when omitted) and
count their own gradient and Hessian-vector-product evaluations. Each
returns the gradient norm at the iterate it hands back; that final
gradient is counted too.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, CurvatureError, DescentError, DivergenceError, NonFiniteError
from .linear_solver import LinearOperator, cg_solve

METHODS = ("gd", "agd", "newton-cg")

SHRINK = 0.5
ARMIJO = 1e-4
MAX_BACKTRACKS = 30


@dataclass(frozen=True)
class InnerBudget:
    """How hard to work on the inner problem.

    ``mu``/``beta`` are strong-convexity and smoothness constants of G;
    when omitted they are taken from the objective's exact spectrum
    (explicit quadratics only).
    """
    method: str = "gd"
    steps: int = 16
    lr: float | None = None
    cg_steps: int = 5
    newton_reps: int = 3
    target_delta: float | None = None
    mu: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown inner method {self.method!r}",
                              path="method.inner.solver")
        if self.steps < 0:
            raise ConfigError("inner step count must be >= 0", path="method.inner.steps")
        if self.lr is not None and not self.lr > 0:
            raise ConfigError("inner learning rate must be positive", path="method.inner.lr")
        if self.cg_steps < 0 or self.newton_reps < 0:
            raise ConfigError("newton-cg budgets must be >= 0")
        if self.target_delta is not None and not self.target_delta > 0:
            raise ConfigError("target delta must be positive")


@dataclass
class SolveResult:
    phi: np.ndarray
    iterations: int
    grad_norm: float
    grad_evals: int
    hvps: int
    value_evals: int = 0
    delta_bound: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {"iterations": self.iterations, "grad_norm": self.grad_norm,
                "grad_evals": self.grad_evals, "hvps": self.hvps,
                "value_evals": self.value_evals, "delta_bound": self.delta_bound,
                **self.diagnostics}


def _constants(obj, budget):
    mu, beta = budget.mu, budget.beta
    if mu is None or beta is None:
        spec = obj.spectrum()
        if spec is not None:
            mu = spec[0] if mu is None else mu
            beta = spec[1] if beta is None else beta
    return mu, beta


def _delta_bound(grad_norm, mu):
    # ||phi - phi*|| <= ||grad G(phi)|| / mu under mu-strong convexity
    return grad_norm / mu if mu and mu > 0 else None


def _start(obj, init):
    return obj.theta.copy() if init is None else np.array(init, dtype=float)


def _grad(obj, phi, meter, step):
    try:
        return obj.gradient(phi, meter)
    except NonFiniteError as err:
        raise DivergenceError(f"inner solver diverged at step {step}: {err}",
                              step=step) from err


def _finite(phi, step):
    if not np.all(np.isfinite(phi)):
        raise DivergenceError(f"inner iterate became non-finite at step {step}", step=step)


def solve_gd(obj, init=None, budget=InnerBudget(), meter=None):
    """Plain gradient descent on G.

    The step size defaults to ``2 / (mu + beta)`` when the spectrum is
    known; otherwise ``budget.lr`` is required.
    """
    mu, beta = _constants(obj, budget)
    lr = budget.lr
    if lr is None:
        if mu is None or beta is None:
            raise ConfigError("gd needs an explicit learning rate off the quadratic family",
                              path="method.inner.lr")
        lr = 2.0 / (mu + beta)
    phi = _start(obj, init)
    evals = 0
    g = None
    k = 0
    for k in range(budget.steps):
        g = _grad(obj, phi, meter, k)
        evals += 1
        if budget.target_delta is not None and mu:
            if np.linalg.norm(g) / mu <= budget.target_delta:
                break
        phi = phi - lr * g
        _finite(phi, k)
        g = None
    else:
        k = budget.steps
    if g is None:
        g = _grad(obj, phi, meter, k)
        evals += 1
    gn = float(np.linalg.norm(g))
    return SolveResult(phi, k, gn, evals, 0, delta_bound=_delta_bound(gn, mu),
                       diagnostics={"lr": lr})


def solve_agd(obj, init=None, budget=InnerBudget(method="agd"), meter=None):
    """Nesterov's accelerated gradient for mu-strongly convex, beta-smooth G.

    Constant momentum ``(sqrt(kappa) - 1) / (sqrt(kappa) + 1)`` and step
    ``1 / beta``. With ``target_delta`` set, stops at the first extrapolated
    point whose gradient certifies ``||y - phi*|| <= target_delta``.
    """
    mu, beta = _constants(obj, budget)
    if mu is None or beta is None:
        raise ConfigError("agd needs strong-convexity constants (mu, beta)",
                          path="method.inner.mu")
    if not (mu > 0 and beta >= mu):
        raise ConfigError(f"agd needs 0 < mu <= beta, got mu={mu}, beta={beta}")
    root = np.sqrt(beta / mu)
    momentum = (root - 1.0) / (root + 1.0)
    x = _start(obj, init)
    y = x.copy()
    evals = 0
    iters = 0
    g_y = None
    while iters < budget.steps:
        g_y = _grad(obj, y, meter, iters)
        evals += 1
        if budget.target_delta is not None and np.linalg.norm(g_y) / mu <= budget.target_delta:
            x = y
            break
        x_new = y - g_y / beta
        y = x_new + momentum * (x_new - x)
        x = x_new
        _finite(y, iters)
        iters += 1
        g_y = None
    # x and y coincide when stopped by the certificate; g_y is then reusable
    if g_y is not None and x is y:
        g = g_y
    else:
        g = _grad(obj, x, meter, iters)
        evals += 1
    gn = float(np.linalg.norm(g))
    return SolveResult(x, iters, gn, evals, 0, delta_bound=_delta_bound(gn, mu),
                       diagnostics={"momentum": momentum, "step": 1.0 / beta})


@dataclass
class LineSearchResult:
    step: float
    value: float
    accepted: bool
    evaluations: int


def line_search(obj, phi, direction, grad, value=None, meter=None):
    """Backtracking Armijo search on G along ``direction``.

    Tries steps 1, 1/2, 1/4, ... and returns the first one with
    ``G(phi + a p) <= G(phi) + 1e-4 * a * grad'p``. After 30 backtracks the
    result is returned with ``accepted=False`` and the smallest step tried.
    """
    slope = float(np.dot(grad, direction))
    if not slope < 0:
        raise DescentError(f"direction is not a descent direction (grad'p = {slope:.3e})")
    evals = 0
    if value is None:
        value = obj.value(phi, meter)
        evals += 1
    step = 1.0
    for _ in range(MAX_BACKTRACKS + 1):
        trial = obj.value(phi + step * direction, meter)
        evals += 1
        if np.isfinite(trial) and trial <= value + ARMIJO * step * slope:
            return LineSearchResult(step, trial, True, evals)
        step *= SHRINK
    return LineSearchResult(step / SHRINK, trial, False, evals)


def solve_newton_cg(obj, init=None, budget=InnerBudget(method="newton-cg"), meter=None):
    """Hessian-free Newton: CG on H p = -grad, then an Armijo line search.

    Repeated ``budget.newton_reps`` times with ``budget.cg_steps`` CG
    iterations each. Negative curvature truncates CG to the last good
    iterate (steepest descent if there is none).
    """
    mu, _ = _constants(obj, budget)
    phi = _start(obj, init)
    evals = hvps = fevals = 0
    value = None
    history = []
    flagged = False
    reps = 0
    g = _grad(obj, phi, meter, 0)
    evals += 1
    for reps in range(budget.newton_reps):
        if not np.any(g):
            break
        counter = {"n": 0}

        def matvec(v, counter=counter):
            counter["n"] += 1
            return obj.hvp(phi, v, meter)

        try:
            res = cg_solve(LinearOperator(obj.dim, matvec), -g, budget.cg_steps,
                           residual_tol=1e-12 * np.linalg.norm(g))
            p = res.w
        except CurvatureError as err:
            p = err.partial
        hvps += counter["n"]
        if not np.any(p) or float(g @ p) >= 0:
            p = -g
        if value is None:
            value = obj.value(phi, meter)
            fevals += 1
            history.append(value)
        ls = line_search(obj, phi, p, g, value=value, meter=meter)
        fevals += ls.evaluations
        if not ls.accepted:
            flagged = True
            break
        phi = phi + ls.step * p
        _finite(phi, reps)
        value = ls.value
        history.append(value)
        g = _grad(obj, phi, meter, reps)
        evals += 1
    else:
        reps = budget.newton_reps
    gn = float(np.linalg.norm(g))
    return SolveResult(phi, reps, gn, evals, hvps, value_evals=fevals,
                       delta_bound=_delta_bound(gn, mu),
                       diagnostics={"line_search_failed": flagged,
                                    "values": history})


SOLVERS = {"gd": solve_gd, "agd": solve_agd, "newton-cg": solve_newton_cg}


def solve(obj, budget, init=None, meter=None):
    """Dispatch on ``budget.method``."""
    return SOLVERS[budget.method](obj, init, budget, meter)
