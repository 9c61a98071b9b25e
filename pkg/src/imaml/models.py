"""Parametric models and the three loss surfaces of the bi-level problem.

The train loss and test loss of a task are the same graph evaluated on the
two splits. The inner objective adds the proximal term
``lam/2 * ||phi - theta||^2`` to the train loss.
"""
from __future__ import annotations

import numpy as np

from .autodiff import GraphBuilder, Tape
from .errors import ConfigError, DimensionError

MODEL_KINDS = ("linear", "mlp", "quadratic")
LOSSES = ("squared_error", "cross_entropy")


def _quadratic_graph(d):
    b = GraphBuilder(d)
    phi = b.params()
    a, lin = b.data("A"), b.data("b")
    return b.build(0.5 * b.dot(phi, b.matvec(a, phi)) + b.dot(lin, phi))


def _dense_graph(widths, activation, loss, bias=True):
    sizes = [(n_in, n_out) for n_in, n_out in zip(widths[:-1], widths[1:])]
    dim = sum(i * o + (o if bias else 0) for i, o in sizes)
    b = GraphBuilder(dim)
    phi = b.params()
    h = b.data("x")
    offset = 0
    for k, (n_in, n_out) in enumerate(sizes):
        w = b.reshape(b.slice(phi, offset, offset + n_in * n_out), (n_in, n_out))
        offset += n_in * n_out
        h = h @ w
        if bias:
            h = b.add_row(h, b.slice(phi, offset, offset + n_out))
            offset += n_out
        if k < len(sizes) - 1:
            h = b.tanh(h) if activation == "tanh" else b.relu(h)
    y = b.data("y")
    out = b.squared_error(h, y) if loss == "squared_error" else b.softmax_xent(h, y)
    return b.build(out), sizes


class Model:
    """h_phi together with its loss.

    Parameters
    ----------
    kind : {"linear", "mlp", "quadratic"}
    dim : int
        Parameter dimension for ``quadratic``; input dimension for ``linear``.
    widths : sequence of int
        Layer widths ``[in, hidden..., out]`` for ``mlp``.
    activation : {"tanh", "relu"}
    loss : {"squared_error", "cross_entropy"}
    bias : bool
        Whether linear/mlp layers carry a bias.
    """

    def __init__(self, kind, dim=None, widths=None, activation="tanh",
                 loss="squared_error", bias=True):
        if kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {kind!r}")
        if loss not in LOSSES:
            raise ConfigError(f"unknown loss {loss!r}")
        if activation not in ("tanh", "relu"):
            raise ConfigError(f"unknown activation {activation!r}")
        self.kind = kind
        self.activation = activation
        self.loss = loss
        self.bias = bias
        if kind == "quadratic":
            if dim is None or dim < 1:
                raise ConfigError("quadratic model needs dim >= 1")
            self.widths = None
            self.graph = _quadratic_graph(int(dim))
            self._layers = []
        else:
            if kind == "linear":
                if dim is None or dim < 1:
                    raise ConfigError("linear model needs an input dim >= 1")
                widths = [int(dim), 1]
            elif widths is None or len(widths) < 2:
                raise ConfigError("mlp needs widths [in, ..., out]")
            self.widths = [int(w) for w in widths]
            self.graph, self._layers = _dense_graph(self.widths, activation, loss, bias)

    @property
    def dim(self):
        return self.graph.param_dim

    def __repr__(self):
        return f"Model(kind={self.kind!r}, dim={self.dim}, loss={self.loss!r})"

    def init_params(self, rng):
        """Glorot-uniform weights and zero biases; zeros for linear/quadratic."""
        if self.kind != "mlp":
            return np.zeros(self.dim)
        rng = np.random.default_rng(rng)
        parts = []
        for n_in, n_out in self._layers:
            limit = np.sqrt(6.0 / (n_in + n_out))
            parts.append(rng.uniform(-limit, limit, size=n_in * n_out))
            if self.bias:
                parts.append(np.zeros(n_out))
        return np.concatenate(parts)

    def predict(self, params, x):
        """Forward pass without the loss (plain numpy)."""
        if self.kind == "quadratic":
            raise TypeError("explicit quadratics have no predictor")
        params = np.asarray(params, dtype=float)
        h = np.asarray(x, dtype=float)
        offset = 0
        for k, (n_in, n_out) in enumerate(self._layers):
            w = params[offset:offset + n_in * n_out].reshape(n_in, n_out)
            offset += n_in * n_out
            h = h @ w
            if self.bias:
                h = h + params[offset:offset + n_out]
                offset += n_out
            if k < len(self._layers) - 1:
                h = np.tanh(h) if self.activation == "tanh" else np.maximum(h, 0.0)
        return h

    def tape(self, params, task, split="train", meter=None):
        return Tape(self.graph, params, task.batch(split), meter=meter)


def train_loss(model, params, task):
    """Mean loss on the task's train split."""
    return model.tape(params, task, "train").value


def test_loss(model, params, task):
    """Mean loss on the task's test split."""
    return model.tape(params, task, "test").value


def train_gradient(model, params, task):
    return model.tape(params, task, "train").gradient()


def test_gradient(model, params, task):
    return model.tape(params, task, "test").gradient()


def model_for(dist, hidden=(40, 40), activation="tanh"):
    """Default model for a task distribution."""
    if dist.kind == "quadratic":
        return Model("quadratic", dim=dist.dim)
    if dist.kind == "sinusoid":
        return Model("mlp", widths=[1, *hidden, 1], activation=activation)
    return Model("mlp", widths=[dist.dim, *hidden, dist.ways],
                 activation=activation, loss="cross_entropy")


class InnerObjective:
    """G(phi) = train_loss(phi) + lam/2 * ||phi - theta||^2 for one task."""

    def __init__(self, model, task, theta, lam):
        if not lam > 0:
            raise ConfigError(f"regularization strength lam must be positive, got {lam}",
                              path="method.lam")
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (model.dim,):
            raise DimensionError(f"theta must have shape ({model.dim},), "
                                 f"got {theta.shape}")
        self.model = model
        self.task = task
        self.theta = theta
        self.lam = float(lam)
        self._spectrum = None

    @property
    def dim(self):
        return self.model.dim

    def _check(self, phi):
        phi = np.asarray(phi, dtype=float)
        if phi.shape != self.theta.shape:
            raise DimensionError(f"phi must have shape {self.theta.shape}, got {phi.shape}")
        return phi

    def value(self, phi, meter=None):
        phi = self._check(phi)
        tape = self.model.tape(phi, self.task, "train", meter)
        tape.release()
        r = phi - self.theta
        return tape.value + 0.5 * self.lam * float(r @ r)

    def gradient(self, phi, meter=None):
        phi = self._check(phi)
        tape = self.model.tape(phi, self.task, "train", meter)
        try:
            return tape.gradient() + self.lam * (phi - self.theta)
        finally:
            tape.release()

    def hvp(self, phi, v, meter=None):
        """Hessian of G applied to ``v``."""
        return self.loss_hvp(phi, v, meter) + self.lam * np.asarray(v, dtype=float)

    def loss_hvp(self, phi, v, meter=None):
        """Hessian of the train loss alone applied to ``v``."""
        phi = self._check(phi)
        tape = self.model.tape(phi, self.task, "train", meter)
        try:
            return tape.hvp(v)
        finally:
            tape.release()

    def spectrum(self):
        """Exact (mu, beta) of G for explicit quadratics, else ``None``."""
        if self.task.quadratic is None:
            return None
        if self._spectrum is None:
            ev = np.linalg.eigvalsh(self.task.quadratic.A)
            self._spectrum = (float(ev[0]) + self.lam, float(ev[-1]) + self.lam)
        return self._spectrum

    def curvature_estimate(self, phi, iters=50, seed=0):
        """Power-iteration estimates of the extreme eigenvalues of the Hessian of G.

        Reported only; nothing enforces a positive margin.
        """
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(self.dim)
        v /= np.linalg.norm(v)
        top = 0.0
        for _ in range(iters):
            w = self.hvp(phi, v)
            top = float(v @ w)
            v = w / max(np.linalg.norm(w), 1e-300)
        u = rng.standard_normal(self.dim)
        u /= np.linalg.norm(u)
        shift = abs(top)
        low = top
        for _ in range(iters):
            w = shift * u - self.hvp(phi, u)
            low = shift - float(u @ w)
            u = w / max(np.linalg.norm(w), 1e-300)
        return low, top
