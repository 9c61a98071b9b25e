"""Dual numbers over numpy arrays.

A :class:`Dual` carries a primal array and a tangent array of the same
shape. Running the reverse sweep of a tape on duals seeded with tangent
``v`` at the parameters yields the gradient in ``.val`` and the
Hessian-vector product in ``.tan`` (forward-over-reverse).

Op rules in :mod:`imaml.autodiff.ops` are written against the small set of
helpers below so the same code runs on plain arrays and on duals.
"""
from __future__ import annotations

import numpy as np


class Dual:
    __slots__ = ("val", "tan")
    # make numpy defer mixed ndarray/Dual arithmetic to the reflected methods
    __array_ufunc__ = None

    def __init__(self, val, tan):
        self.val = val
        self.tan = tan

    @property
    def shape(self):
        return np.shape(self.val)

    @property
    def ndim(self):
        return np.ndim(self.val)

    @property
    def T(self):
        return Dual(self.val.T, self.tan.T)

    def reshape(self, *shape):
        return Dual(np.reshape(self.val, *shape), np.reshape(self.tan, *shape))

    def __getitem__(self, key):
        return Dual(self.val[key], self.tan[key])

    def __neg__(self):
        return Dual(-self.val, -self.tan)

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.tan + other.tan)
        return Dual(self.val + other, self.tan + np.zeros_like(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.tan - other.tan)
        return Dual(self.val - other, self.tan + np.zeros_like(other))

    def __rsub__(self, other):
        return Dual(other - self.val, -self.tan + np.zeros_like(other))

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val,
                        self.tan * other.val + self.val * other.tan)
        return Dual(self.val * other, self.tan * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            q = self.val / other.val
            return Dual(q, (self.tan - q * other.tan) / other.val)
        return Dual(self.val / other, self.tan / other)

    def __rtruediv__(self, other):
        q = other / self.val
        return Dual(q, -q * self.tan / self.val)

    def __matmul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val @ other.val,
                        self.tan @ other.val + self.val @ other.tan)
        return Dual(self.val @ other, self.tan @ other)

    def __rmatmul__(self, other):
        return Dual(other @ self.val, other @ self.tan)

    def __repr__(self):
        return f"Dual(val={self.val!r}, tan={self.tan!r})"


def primal(x):
    """Strip the tangent, if any."""
    return x.val if isinstance(x, Dual) else x


def tanh(x):
    if isinstance(x, Dual):
        y = np.tanh(x.val)
        return Dual(y, (1.0 - y * y) * x.tan)
    return np.tanh(x)


def exp(x):
    if isinstance(x, Dual):
        y = np.exp(x.val)
        return Dual(y, y * x.tan)
    return np.exp(x)


def log(x):
    if isinstance(x, Dual):
        return Dual(np.log(x.val), x.tan / x.val)
    return np.log(x)


def sum(x, axis=None, keepdims=False):
    if isinstance(x, Dual):
        return Dual(np.sum(x.val, axis=axis, keepdims=keepdims),
                    np.sum(x.tan, axis=axis, keepdims=keepdims))
    return np.sum(x, axis=axis, keepdims=keepdims)


def outer(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        av, at = (a.val, a.tan) if isinstance(a, Dual) else (a, None)
        bv, bt = (b.val, b.tan) if isinstance(b, Dual) else (b, None)
        tan = np.zeros((np.size(av), np.size(bv)))
        if at is not None:
            tan = tan + np.outer(at, bv)
        if bt is not None:
            tan = tan + np.outer(av, bt)
        return Dual(np.outer(av, bv), tan)
    return np.outer(a, b)


def broadcast_to(x, shape):
    if isinstance(x, Dual):
        return Dual(np.broadcast_to(x.val, shape).copy(),
                    np.broadcast_to(x.tan, shape).copy())
    return np.broadcast_to(x, shape).copy()


def scatter(x, size, start, stop):
    """Embed ``x`` (1-d) into a zero vector of length ``size`` at [start, stop)."""
    def place(arr):
        out = np.zeros(size)
        out[start:stop] = arr
        return out
    if isinstance(x, Dual):
        return Dual(place(x.val), place(x.tan))
    return place(x)


def is_finite(x):
    if isinstance(x, Dual):
        return bool(np.all(np.isfinite(x.val)) and np.all(np.isfinite(x.tan)))
    return bool(np.all(np.isfinite(x)))
