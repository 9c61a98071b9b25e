"""Forward recording, reverse sweeps and Hessian-vector products.

Memory is accounted in tape slots: one slot per recorded node value. A
Hessian-vector-product replay adds one tangent slot per node on top of the
recorded values, so an HVP costs exactly twice the slots of a gradient.
Adjoint buffers of the reverse sweep are transient and not counted.
"""
from __future__ import annotations

import numpy as np

from ..errors import DimensionError, NonFiniteError
from . import dual as D
from .ops import REGISTRY


class MemoryMeter:
    """Live/peak slot counter shared by every tape of one computation."""

    def __init__(self):
        self.live = 0
        self.peak = 0

    def acquire(self, n):
        self.live += n
        if self.live > self.peak:
            self.peak = self.live

    def release(self, n):
        self.live -= n


def _as_params(graph, params):
    params = np.asarray(params, dtype=float)
    if params.shape != (graph.param_dim,):
        raise DimensionError(f"graph expects a parameter vector of shape "
                             f"({graph.param_dim},), got {params.shape}")
    return params


def _check_data(graph, data):
    for name in graph.data_names:
        if name not in data:
            raise DimensionError(f"batch is missing input {name!r}")
        arr = data[name]
        if np.ndim(arr) > 0 and np.shape(arr)[0] == 0:
            raise DimensionError(f"batch input {name!r} is empty")


def _leaf_value(node, params, data):
    if node.op == "param":
        return params
    if node.op == "data":
        return data[node.attrs["name"]]
    return node.attrs["value"]


class Tape:
    """Recorded forward pass of ``graph`` at ``params`` on ``data``.

    Parameters
    ----------
    graph : CompGraph
    params : array_like, shape (d,)
    data : dict
        Arrays for the graph's ``data`` nodes.
    meter : MemoryMeter, optional
        Shared meter; a private one is created when omitted.
    """

    def __init__(self, graph, params, data, meter=None):
        self.graph = graph
        self.params = _as_params(graph, params)
        _check_data(graph, data)
        data = {name: np.asarray(data[name]) for name in graph.data_names}
        self.data = data
        self.meter = meter if meter is not None else MemoryMeter()
        self._held = 0
        values = []
        for i, node in enumerate(graph.nodes):
            if node.op in ("param", "data", "const"):
                out = _leaf_value(node, self.params, data)
            else:
                out = REGISTRY[node.op].forward([values[j] for j in node.inputs],
                                                node.attrs)
                if not D.is_finite(out):
                    raise NonFiniteError(f"non-finite value at node {i} "
                                         f"({node.op})", node=i)
            values.append(out)
            self.meter.acquire(1)
            self._held += 1
        self.values = values
        out = values[graph.output]
        if np.ndim(out) != 0:
            raise DimensionError(f"graph output must be a scalar, got shape "
                                 f"{np.shape(out)}")
        self.value = float(out)

    @property
    def peak_nodes(self):
        return self.meter.peak

    def _reverse(self, values, seed):
        graph = self.graph
        adj = [None] * len(graph.nodes)
        adj[graph.output] = seed
        for i in range(graph.output, 0, -1):
            g = adj[i]
            if g is None or not graph.needs_grad[i]:
                continue
            node = graph.nodes[i]
            if node.op in ("data", "const"):
                continue
            args = [values[j] for j in node.inputs]
            needs = tuple(graph.needs_grad[j] for j in node.inputs)
            contribs = REGISTRY[node.op].vjp(g, args, values[i], node.attrs, needs)
            for j, need, c in zip(node.inputs, needs, contribs):
                if not need or c is None:
                    continue
                adj[j] = c if adj[j] is None else adj[j] + c
            adj[i] = None
        grad = adj[0]
        if grad is None:
            return None
        if not D.is_finite(grad):
            raise NonFiniteError("non-finite adjoint at the parameter slot", node=0)
        return grad

    def gradient(self):
        """Gradient of the recorded scalar with respect to the parameters."""
        grad = self._reverse(self.values, 1.0)
        if grad is None:
            return np.zeros(self.graph.param_dim)
        return np.array(grad, dtype=float)

    def gradient_and_hvp(self, v):
        """Return ``(gradient, Hessian @ v)`` by replaying the tape on duals."""
        v = np.asarray(v, dtype=float)
        if v.shape != self.params.shape:
            raise DimensionError(f"direction must have shape {self.params.shape}, "
                                 f"got {v.shape}")
        graph = self.graph
        duals = []
        slots = sum(graph.needs_grad)
        self.meter.acquire(slots)
        try:
            for i, node in enumerate(graph.nodes):
                if node.op == "param":
                    out = D.Dual(self.params, v)
                elif node.op in ("data", "const"):
                    out = self.values[i]
                elif not graph.needs_grad[i]:
                    out = self.values[i]
                else:
                    out = REGISTRY[node.op].forward([duals[j] for j in node.inputs],
                                                    node.attrs)
                    if not D.is_finite(out):
                        raise NonFiniteError(f"non-finite tangent at node {i} "
                                             f"({node.op})", node=i)
                duals.append(out)
            grad = self._reverse(duals, D.Dual(1.0, 0.0))
        finally:
            self.meter.release(slots)
        if grad is None:
            zero = np.zeros(graph.param_dim)
            return zero, zero.copy()
        if not isinstance(grad, D.Dual):
            # output is affine in the parameters along this path
            return np.array(grad, dtype=float), np.zeros(graph.param_dim)
        return np.array(grad.val, dtype=float), np.array(grad.tan, dtype=float)

    def hvp(self, v):
        return self.gradient_and_hvp(v)[1]

    def release(self):
        """Return this tape's slots to the meter; the tape stays readable."""
        self.meter.release(self._held)
        self._held = 0


def evaluate(graph, params, data):
    """Scalar value of ``graph`` at ``params`` on ``data``."""
    return Tape(graph, params, data).value


def gradient(graph, params, data):
    """Reverse-mode gradient of ``graph`` with respect to ``params``."""
    return Tape(graph, params, data).gradient()


def hessian_vector_product(graph, params, data, v):
    """Hessian of ``graph`` at ``params`` applied to ``v``."""
    return Tape(graph, params, data).hvp(v)
