"""Matrix-free conjugate gradient for symmetric positive-definite systems."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CurvatureError, DimensionError


@dataclass(frozen=True)
class LinearOperator:
    """``v -> M v`` for a symmetric operator that is never materialized."""
    dim: int
    matvec: object

    def __call__(self, v):
        return self.matvec(v)


@dataclass
class CGResult:
    w: np.ndarray
    iterations: int
    residual_norm: float
    matvecs: int
    converged: bool

    def to_dict(self):
        return {"iterations": self.iterations, "residual_norm": self.residual_norm,
                "matvecs": self.matvecs, "converged": self.converged}


def cg_solve(op, rhs, max_iters, residual_tol=1e-10, x0=None):
    """Solve ``M w = rhs`` by conjugate gradient.

    Starts from ``w = 0`` unless ``x0`` is given, in which case the initial
    residual costs one extra matvec. Stops after ``max_iters`` iterations or
    once the residual 2-norm is at most ``residual_tol``. Only a fixed
    number of d-vectors is kept alive, whatever the iteration count.

    Raises
    ------
    CurvatureError
        If a search direction with ``p' M p <= 0`` is met. The iterate
        reached so far is attached as ``partial``.
    """
    rhs = np.asarray(rhs, dtype=float)
    dim = getattr(op, "dim", rhs.shape[0])
    if rhs.shape != (dim,):
        raise DimensionError(f"rhs must have shape ({dim},), got {rhs.shape}")
    if max_iters < 0:
        raise ValueError("max_iters must be >= 0")
    matvecs = 0
    if x0 is None:
        w = np.zeros(dim)
        r = rhs.copy()
    else:
        w = np.array(x0, dtype=float)
        r = rhs - op(w)
        matvecs += 1
    p = r.copy()
    rr = float(r @ r)
    it = 0
    while it < max_iters and np.sqrt(rr) > residual_tol:
        mp = op(p)
        matvecs += 1
        curv = float(p @ mp)
        if not curv > 0:
            raise CurvatureError(
                f"non-positive curvature p'Mp={curv:.3e} at CG iteration {it}; "
                "the operator is not positive definite here",
                partial=w.copy(), iteration=it)
        step = rr / curv
        w += step * p
        r -= step * mp
        rr_new = float(r @ r)
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
    res = float(np.sqrt(rr))
    return CGResult(w, it, res, matvecs, res <= residual_tol)
