"""Immutable computation graphs and a small builder for them."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ops import LEAVES, REGISTRY


@dataclass(frozen=True)
class Node:
    op: str
    inputs: tuple = ()
    attrs: dict = field(default_factory=dict, hash=False, compare=False)


class CompGraph:
    """A scalar-valued differentiable program in evaluation order.

    Node 0 is always the parameter slot. ``data`` nodes are filled from the
    batch passed at evaluation time, ``const`` nodes hold arrays baked into
    the graph. The graph is read-only after construction and may be shared
    between threads.
    """

    def __init__(self, nodes, param_dim, output):
        nodes = tuple(nodes)
        if not nodes or nodes[0].op != "param":
            raise ValueError("node 0 must be the parameter slot")
        if not 0 <= output < len(nodes):
            raise ValueError(f"output index {output} out of range")
        needs_grad = []
        for i, node in enumerate(nodes):
            if node.op not in LEAVES and node.op not in REGISTRY:
                raise ValueError(f"node {i}: unknown op {node.op!r}")
            if node.op == "param" and i != 0:
                raise ValueError("only one parameter slot is allowed")
            if node.op not in LEAVES and len(node.inputs) != REGISTRY[node.op].arity:
                raise ValueError(f"node {i}: {node.op} takes "
                                 f"{REGISTRY[node.op].arity} inputs")
            for j in node.inputs:
                if not 0 <= j < i:
                    raise ValueError(f"node {i} reads node {j}; graph must be "
                                     "acyclic in evaluation order")
            needs_grad.append(node.op == "param"
                              or any(needs_grad[j] for j in node.inputs))
        self.nodes = nodes
        self.param_dim = int(param_dim)
        self.output = int(output)
        self.needs_grad = tuple(needs_grad)
        self.data_names = tuple(sorted({n.attrs["name"] for n in nodes
                                        if n.op == "data"}))

    def __len__(self):
        return len(self.nodes)

    def __repr__(self):
        return (f"CompGraph(nodes={len(self.nodes)}, param_dim={self.param_dim}, "
                f"data={list(self.data_names)})")


class Sym:
    """Handle to a node under construction; supports a few operators."""

    __slots__ = ("builder", "index")

    def __init__(self, builder, index):
        self.builder = builder
        self.index = index

    def __add__(self, other):
        return self.builder.op("add", self, other)

    def __sub__(self, other):
        return self.builder.op("sub", self, other)

    def __mul__(self, other):
        if isinstance(other, Sym):
            return self.builder.op("mul", self, other)
        return self.builder.op("scale", self, c=float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return self.builder.op("matmul", self, other)


class GraphBuilder:
    """Record nodes in evaluation order, then :meth:`build` a CompGraph.

    >>> b = GraphBuilder(2)
    >>> phi = b.params()
    >>> g = b.build(0.5 * b.dot(phi, phi))
    >>> len(g)
    3
    """

    def __init__(self, param_dim):
        self.param_dim = int(param_dim)
        self._nodes = [Node("param")]

    def _push(self, node):
        self._nodes.append(node)
        return Sym(self, len(self._nodes) - 1)

    def params(self):
        return Sym(self, 0)

    def data(self, name):
        return self._push(Node("data", (), {"name": name}))

    def const(self, value):
        return self._push(Node("const", (), {"value": np.asarray(value, dtype=float)}))

    def op(self, name, *args, **attrs):
        return self._push(Node(name, tuple(a.index for a in args), attrs))

    def slice(self, x, start, stop):
        return self.op("slice", x, start=int(start), stop=int(stop))

    def reshape(self, x, shape):
        return self.op("reshape", x, shape=tuple(shape))

    def add_row(self, x, row):
        return self.op("add_row", x, row)

    def matvec(self, m, v):
        return self.op("matvec", m, v)

    def dot(self, a, b):
        return self.op("dot", a, b)

    def tanh(self, x):
        return self.op("tanh", x)

    def relu(self, x):
        return self.op("relu", x)

    def sum(self, x):
        return self.op("sum", x)

    def mean(self, x):
        return self.op("mean", x)

    def squared_error(self, pred, target):
        return self.op("squared_error", pred, target)

    def softmax_xent(self, logits, labels):
        return self.op("softmax_xent", logits, labels)

    def build(self, output):
        return CompGraph(self._nodes, self.param_dim, output.index)
