"""Cost ledgers and the method-comparison sweep on quadratic families."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .errors import OracleError
from .inner_solvers import InnerBudget
from .meta_gradient import meta_gradient
from .models import Model
from .oracle import exact_meta_gradient, unrolled_gd_meta_gradient_dense

TABLE_COLUMNS = ("method", "inner_steps", "cg_steps", "kappa", "lam", "tasks",
                 "exact_error", "exact_error_rel", "approx_error", "approx_error_rel",
                 "grad_evals", "hvps", "peak_memory", "wall_time")


@dataclass(frozen=True)
class CostLedger:
    """Counters of one or more meta-gradient computations.

    ``coords`` holds sweep coordinates; ``None`` means "unconstrained", which
    makes ``CostLedger()`` the identity of :func:`merge`.
    """
    grad_evals: int = 0
    hvps: int = 0
    peak_memory: int = 0
    wall_time: float = 0.0
    methods: frozenset = frozenset()
    coords: dict | None = None

    def __post_init__(self):
        if self.grad_evals < 0 or self.hvps < 0 or self.peak_memory < 0 or self.wall_time < 0:
            raise ValueError("ledger counters must be nonnegative")

    @classmethod
    def from_report(cls, report, **coords):
        return cls(report.grad_evals, report.hvps, report.peak_memory, report.wall_time,
                   frozenset([report.method]), dict(coords))

    def to_dict(self):
        return {"grad_evals": self.grad_evals, "hvps": self.hvps,
                "peak_memory": self.peak_memory, "wall_time": self.wall_time,
                "methods": sorted(self.methods), "coords": self.coords}


def _merge2(a, b):
    if a.coords is None:
        coords = b.coords
    elif b.coords is None:
        coords = a.coords
    else:
        coords = {k: v for k, v in a.coords.items() if k in b.coords and b.coords[k] == v}
    return CostLedger(a.grad_evals + b.grad_evals, a.hvps + b.hvps,
                      max(a.peak_memory, b.peak_memory), a.wall_time + b.wall_time,
                      a.methods | b.methods, coords)


def merge(*ledgers):
    """Sum counts, take peak maxima, union method tags, keep shared coordinates."""
    return reduce(_merge2, ledgers, CostLedger())


@dataclass
class ComparisonTable:
    rows: list = field(default_factory=list)

    def to_csv(self, header=None):
        buf = io.StringIO()
        if header:
            buf.write(f"# {header}\n")
        writer = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: _cell(row.get(k)) for k in TABLE_COLUMNS})
        return buf.getvalue()

    def to_json(self, **meta):
        return json.dumps({**meta, "rows": self.rows}, indent=2, sort_keys=True)

    def select(self, **where):
        return [r for r in self.rows if all(r.get(k) == v for k, v in where.items())]


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".17g")
    return x


def _relative(err, ref):
    n = float(np.linalg.norm(ref))
    return float(err) / n if n > 0 else float("nan")


def compare_methods(tasks, theta, lam, methods=("imaml", "maml", "fomaml", "reptile"),
                    inner_steps=(4, 16, 64, 256), cg_steps=(0, 1, 2, 5, 10),
                    include_wall_time=False):
    """One row per (method, budget) cell, averaged over ``tasks``.

    iMAML cells span ``inner_steps x cg_steps``; the other methods span
    ``inner_steps`` only. Inner solves are GD at ``2 / (mu + beta)`` and MAML
    unrolls the same GD path, so the approx-solve error (distance to the
    derivative of the GD algorithm actually run) is defined for every
    method except Reptile, whose output is a direction rather than a
    meta-gradient estimate.
    """
    if not tasks or any(t.quadratic is None for t in tasks):
        raise OracleError("compare_methods needs a quadratic family with an exact oracle")
    d = tasks[0].quadratic.dim
    model = Model("quadratic", dim=d)
    theta = np.asarray(theta, dtype=float)
    exact = [exact_meta_gradient(t, theta, lam).g for t in tasks]
    cells = []
    for method in methods:
        for s in inner_steps:
            for k in (cg_steps if method == "imaml" else (None,)):
                cells.append((method, s, k))
    table = ComparisonTable()
    for method, s, k in cells:
        errs, rels, aerrs, arels, ledgers = [], [], [], [], []
        for task, ex in zip(tasks, exact):
            budget = InnerBudget(method="gd", steps=s)
            rep = meta_gradient(method, model, task, theta, lam, budget,
                                cg_steps=k if k is not None else 0)
            err = float(np.linalg.norm(rep.g - ex))
            errs.append(err)
            rels.append(_relative(err, ex))
            if method != "reptile":
                alpha = rep.extras.get("alpha") or rep.solve.diagnostics["lr"]
                ref, _ = unrolled_gd_meta_gradient_dense(task, theta, lam, s, alpha)
                aerr = float(np.linalg.norm(rep.g - ref))
                aerrs.append(aerr)
                arels.append(_relative(aerr, ref))
            ledgers.append(CostLedger.from_report(rep, inner_steps=s, cg_steps=k))
        total = merge(*ledgers)
        n = len(tasks)
        table.rows.append({
            "method": method, "inner_steps": s, "cg_steps": k,
            "kappa": tasks[0].meta.get("kappa"), "lam": float(lam), "tasks": n,
            "exact_error": float(np.mean(errs)), "exact_error_rel": float(np.mean(rels)),
            "approx_error": float(np.mean(aerrs)) if aerrs else None,
            "approx_error_rel": float(np.mean(arels)) if arels else None,
            # per-task averages; the peak is a maximum over tasks
            "grad_evals": total.grad_evals / n, "hvps": total.hvps / n,
            "peak_memory": total.peak_memory,
            "wall_time": total.wall_time / n if include_wall_time else 0.0,
        })
    return table
