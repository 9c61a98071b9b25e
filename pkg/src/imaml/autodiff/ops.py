"""Primitive operations: forward rules and vector-Jacobian products.

Every rule is written with the arithmetic of :mod:`imaml.autodiff.dual`,
so when the tape is replayed on dual numbers the reverse sweep also
carries Hessian-vector-product tangents.
"""
from __future__ import annotations

import numpy as np

from . import dual as D


class Op:
    name = ""
    arity = 0

    def forward(self, args, attrs):
        raise NotImplementedError

    def vjp(self, g, args, out, attrs, needs):
        """Return one adjoint per input (``None`` where ``needs`` is False)."""
        raise NotImplementedError


class Leaf(Op):
    def vjp(self, g, args, out, attrs, needs):
        return ()


class Slice(Op):
    name, arity = "slice", 1

    def forward(self, args, attrs):
        return args[0][attrs["start"]:attrs["stop"]]

    def vjp(self, g, args, out, attrs, needs):
        return (D.scatter(g, args[0].shape[0], attrs["start"], attrs["stop"]),)


class Reshape(Op):
    name, arity = "reshape", 1

    def forward(self, args, attrs):
        return args[0].reshape(attrs["shape"])

    def vjp(self, g, args, out, attrs, needs):
        return (g.reshape(args[0].shape),)


class Add(Op):
    name, arity = "add", 2

    def forward(self, args, attrs):
        return args[0] + args[1]

    def vjp(self, g, args, out, attrs, needs):
        return (g if needs[0] else None, g if needs[1] else None)


class Sub(Op):
    name, arity = "sub", 2

    def forward(self, args, attrs):
        return args[0] - args[1]

    def vjp(self, g, args, out, attrs, needs):
        return (g if needs[0] else None, -g if needs[1] else None)


class Mul(Op):
    name, arity = "mul", 2

    def forward(self, args, attrs):
        return args[0] * args[1]

    def vjp(self, g, args, out, attrs, needs):
        a, b = args
        return (g * b if needs[0] else None, g * a if needs[1] else None)


class AddRow(Op):
    """(n, h) matrix plus an (h,) row vector broadcast over rows."""
    name, arity = "add_row", 2

    def forward(self, args, attrs):
        return args[0] + args[1]

    def vjp(self, g, args, out, attrs, needs):
        return (g if needs[0] else None,
                D.sum(g, axis=0) if needs[1] else None)


class Scale(Op):
    name, arity = "scale", 1

    def forward(self, args, attrs):
        return args[0] * attrs["c"]

    def vjp(self, g, args, out, attrs, needs):
        return (g * attrs["c"],)


class MatMul(Op):
    name, arity = "matmul", 2

    def forward(self, args, attrs):
        return args[0] @ args[1]

    def vjp(self, g, args, out, attrs, needs):
        a, b = args
        return (g @ b.T if needs[0] else None, a.T @ g if needs[1] else None)


class MatVec(Op):
    name, arity = "matvec", 2

    def forward(self, args, attrs):
        return args[0] @ args[1]

    def vjp(self, g, args, out, attrs, needs):
        m, v = args
        return (D.outer(g, v) if needs[0] else None,
                m.T @ g if needs[1] else None)


class Dot(Op):
    name, arity = "dot", 2

    def forward(self, args, attrs):
        return D.sum(args[0] * args[1])

    def vjp(self, g, args, out, attrs, needs):
        a, b = args
        return (g * b if needs[0] else None, g * a if needs[1] else None)


class Tanh(Op):
    name, arity = "tanh", 1

    def forward(self, args, attrs):
        return D.tanh(args[0])

    def vjp(self, g, args, out, attrs, needs):
        return (g * (1.0 - out * out),)


class Relu(Op):
    name, arity = "relu", 1

    def forward(self, args, attrs):
        return args[0] * (D.primal(args[0]) > 0)

    def vjp(self, g, args, out, attrs, needs):
        return (g * (D.primal(args[0]) > 0),)


class Sum(Op):
    name, arity = "sum", 1

    def forward(self, args, attrs):
        return D.sum(args[0])

    def vjp(self, g, args, out, attrs, needs):
        return (D.broadcast_to(g, args[0].shape),)


class Mean(Op):
    name, arity = "mean", 1

    def forward(self, args, attrs):
        return D.sum(args[0]) * (1.0 / np.size(D.primal(args[0])))

    def vjp(self, g, args, out, attrs, needs):
        n = np.size(D.primal(args[0]))
        return (D.broadcast_to(g * (1.0 / n), args[0].shape),)


class SquaredError(Op):
    """Mean over all entries of (prediction - target)**2."""
    name, arity = "squared_error", 2

    def forward(self, args, attrs):
        r = args[0] - args[1]
        return D.sum(r * r) * (1.0 / np.size(D.primal(r)))

    def vjp(self, g, args, out, attrs, needs):
        r = args[0] - args[1]
        gr = r * (g * (2.0 / np.size(D.primal(r))))
        return (gr if needs[0] else None, -gr if needs[1] else None)


class SoftmaxCrossEntropy(Op):
    """Mean cross-entropy of integer labels under softmax(logits).

    The row max is subtracted as a constant shift; the result does not
    depend on it, so treating it as constant is exact for derivatives too.
    """
    name, arity = "softmax_xent", 2

    @staticmethod
    def _shifted(logits):
        shift = np.max(D.primal(logits), axis=1, keepdims=True)
        return logits - shift

    def forward(self, args, attrs):
        logits, labels = args
        z = self._shifted(logits)
        lse = D.log(D.sum(D.exp(z), axis=1))
        n = labels.shape[0]
        picked = z[np.arange(n), labels.astype(np.int64)]
        return D.sum(lse - picked) * (1.0 / n)

    def vjp(self, g, args, out, attrs, needs):
        logits, labels = args
        z = self._shifted(logits)
        ez = D.exp(z)
        probs = ez / D.sum(ez, axis=1, keepdims=True)
        n, c = D.primal(logits).shape
        onehot = np.zeros((n, c))
        onehot[np.arange(n), labels.astype(np.int64)] = 1.0
        return ((probs - onehot) * (g * (1.0 / n)), None)


REGISTRY = {op.name: op for op in (
    Slice(), Reshape(), Add(), Sub(), Mul(), AddRow(), Scale(), MatMul(),
    MatVec(), Dot(), Tanh(), Relu(), Sum(), Mean(), SquaredError(),
    SoftmaxCrossEntropy(),
)}
LEAVES = ("param", "data", "const")
