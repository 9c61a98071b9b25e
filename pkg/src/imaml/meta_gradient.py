"""Task meta-gradient engines: implicit (CG), unrolled, first-order, Reptile.

Every engine routes its tapes through one :class:`MemoryMeter`, so the
reported ``peak_memory`` is the largest number of tape slots alive at
once during the whole computation.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import MemoryMeter
from .errors import ConfigError, CurvatureError, DivergenceError
from .inner_solvers import InnerBudget, SolveResult, solve
from .linear_solver import CGResult, LinearOperator, cg_solve
from .models import InnerObjective

METHODS = ("imaml", "maml", "fomaml", "reptile")


@dataclass
class MetaGradReport:
    g: np.ndarray
    method: str
    solve: SolveResult | None
    cg: CGResult | None
    grad_evals: int
    hvps: int
    peak_memory: int
    wall_time: float
    phi: np.ndarray
    test_loss: float
    extras: dict = field(default_factory=dict)

    def to_row(self):
        row = {"method": self.method, "grad_evals": self.grad_evals, "hvps": self.hvps,
               "peak_memory": self.peak_memory, "wall_time": self.wall_time,
               "test_loss": self.test_loss, "g_norm": float(np.linalg.norm(self.g))}
        if self.solve is not None:
            row["inner_iterations"] = self.solve.iterations
            row["inner_grad_norm"] = self.solve.grad_norm
        if self.cg is not None:
            row["cg_iterations"] = self.cg.iterations
            row["cg_residual"] = self.cg.residual_norm
        row.update(self.extras)
        return row


def _test_value_and_grad(model, task, phi, meter):
    tape = model.tape(phi, task, "test", meter)
    try:
        return tape.value, tape.gradient()
    finally:
        tape.release()


def _operator_floor(obj):
    """Smallest eigenvalue of I + H/lam when the spectrum is known."""
    spec = obj.spectrum()
    if spec is None:
        return None
    return spec[0] / obj.lam


def imaml_meta_gradient(model, task, theta, lam, inner=InnerBudget(), cg_steps=5,
                        cg_tol=1e-10, on_curvature="raise"):
    """Implicit meta-gradient.

    Solves the inner problem, takes ``v`` = test-loss gradient at the
    adapted parameters and runs ``cg_steps`` CG iterations on
    ``(I + H/lam) g = v``, H being the train-loss Hessian there. With
    ``cg_steps == 0`` CG is skipped and ``g = v``.

    With ``on_curvature="truncate"`` a non-positive-curvature direction
    stops CG and the iterate reached so far is used (``v`` itself if that
    happens on the first direction); ``extras["curvature_truncated"]``
    records it.

    Raises
    ------
    CurvatureError
        When ``I + H/lam`` shows non-positive curvature; a larger ``lam``
        usually restores positive definiteness.
    """
    start = time.perf_counter()
    meter = MemoryMeter()
    obj = InnerObjective(model, task, theta, lam)
    res = solve(obj, inner, meter=meter)
    loss, v = _test_value_and_grad(model, task, res.phi, meter)
    cg = None
    extras = {}
    if cg_steps == 0:
        g = v
    else:
        matvecs = [0]

        def matvec(u):
            matvecs[0] += 1
            return u + obj.loss_hvp(res.phi, u, meter) / lam

        try:
            cg = cg_solve(LinearOperator(obj.dim, matvec), v, cg_steps, residual_tol=cg_tol)
            g = cg.w
        except CurvatureError as err:
            if on_curvature != "truncate":
                raise CurvatureError(f"{err}; increase lam to make I + H/lam positive "
                                     "definite", partial=err.partial,
                                     iteration=err.iteration) from err
            g = err.partial if err.iteration > 0 else v.copy()
            cg = CGResult(g, err.iteration, float("nan"), matvecs[0], False)
            extras["curvature_truncated"] = True
    floor = _operator_floor(obj)
    if cg is None:
        extras["delta_prime_bound"] = 0.0 if floor else None
    else:
        extras["delta_prime_bound"] = cg.residual_norm / floor if floor else None
    return MetaGradReport(g, "imaml", res, cg, res.grad_evals + 1,
                          res.hvps + (cg.matvecs if cg else 0), meter.peak,
                          time.perf_counter() - start, res.phi, loss, extras)


def maml_meta_gradient(model, task, theta, lam, steps, alpha=None):
    """Meta-gradient by differentiating through ``steps`` GD steps on G.

    The path ``phi_{k+1} = phi_k - alpha * grad G(phi_k)`` starts at theta and
    every train tape along it is kept until the reverse sweep consumes it.
    Theta enters both through the start point and through the proximal
    centre, so each reversed step contributes ``alpha * lam * u`` to the
    theta adjoint besides propagating ``u <- (I - alpha (H + lam I)) u``.
    """
    if steps < 0:
        raise ConfigError("unroll steps must be >= 0", path="method.inner.steps")
    start = time.perf_counter()
    meter = MemoryMeter()
    obj = InnerObjective(model, task, theta, lam)
    if alpha is None:
        spec = obj.spectrum()
        if spec is None:
            raise ConfigError("maml needs an explicit inner step size off the quadratic family",
                              path="method.inner.lr")
        alpha = 2.0 / (spec[0] + spec[1])
    phi = obj.theta.copy()
    tapes = []
    for k in range(steps):
        tape = model.tape(phi, task, "train", meter)
        tapes.append(tape)
        phi = phi - alpha * (tape.gradient() + lam * (phi - obj.theta))
        if not np.all(np.isfinite(phi)):
            raise DivergenceError(f"unrolled inner iterate became non-finite at step {k}",
                                  step=k)
    loss, u = _test_value_and_grad(model, task, phi, meter)
    g_theta = np.zeros_like(u)
    for tape in reversed(tapes):
        g_theta += alpha * lam * u
        u = u - alpha * (tape.hvp(u) + lam * u)
        tape.release()
    g = u + g_theta
    return MetaGradReport(g, "maml", None, None, steps + 1, steps, meter.peak,
                          time.perf_counter() - start, phi, loss,
                          {"alpha": alpha, "steps": steps})


def fomaml_meta_gradient(model, task, theta, lam, inner=InnerBudget()):
    """First-order meta-gradient: the test-loss gradient at the adapted parameters."""
    start = time.perf_counter()
    meter = MemoryMeter()
    obj = InnerObjective(model, task, theta, lam)
    res = solve(obj, inner, meter=meter)
    loss, v = _test_value_and_grad(model, task, res.phi, meter)
    return MetaGradReport(v, "fomaml", res, None, res.grad_evals + 1, res.hvps,
                          meter.peak, time.perf_counter() - start, res.phi, loss)


def reptile_meta_gradient(model, task, theta, lam, inner=InnerBudget()):
    """Reptile direction ``theta - phi`` toward the adapted parameters.

    The test loss at ``phi`` is evaluated for reporting only and is not
    counted as a gradient evaluation.
    """
    start = time.perf_counter()
    meter = MemoryMeter()
    obj = InnerObjective(model, task, theta, lam)
    res = solve(obj, inner, meter=meter)
    tape = model.tape(res.phi, task, "test", meter)
    tape.release()
    return MetaGradReport(obj.theta - res.phi, "reptile", res, None, res.grad_evals,
                          res.hvps, meter.peak, time.perf_counter() - start, res.phi,
                          tape.value)


def meta_gradient(method, model, task, theta, lam, inner=InnerBudget(), cg_steps=5,
                  cg_tol=1e-10, alpha=None, on_curvature="raise"):
    """Dispatch to one of the four engines by name."""
    if method == "imaml":
        return imaml_meta_gradient(model, task, theta, lam, inner, cg_steps, cg_tol,
                                   on_curvature)
    if method == "maml":
        return maml_meta_gradient(model, task, theta, lam, inner.steps,
                                  alpha if alpha is not None else inner.lr)
    if method == "fomaml":
        return fomaml_meta_gradient(model, task, theta, lam, inner)
    if method == "reptile":
        return reptile_meta_gradient(model, task, theta, lam, inner)
    raise ConfigError(f"unknown meta-gradient method {method!r}", path="method.engine")
