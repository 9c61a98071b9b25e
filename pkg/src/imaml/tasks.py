"""Seeded task distributions: explicit quadratics, sinusoids, Gaussian classes."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

KINDS = ("quadratic", "sinusoid", "gaussian-classes")


@dataclass(frozen=True, eq=False)
class Split:
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.x)


@dataclass(frozen=True, eq=False)
class QuadraticPayload:
    """Train loss ``0.5 p'Ap + b'p`` and test loss ``0.5 p'A_test p + b_test'p``."""
    A: np.ndarray
    b: np.ndarray
    A_test: np.ndarray
    b_test: np.ndarray

    @property
    def dim(self):
        return self.b.shape[0]


@dataclass(frozen=True, eq=False)
class Task:
    id: str
    kind: str
    train: Split | None = None
    test: Split | None = None
    quadratic: QuadraticPayload | None = None
    meta: dict = field(default_factory=dict)

    def batch(self, split="train"):
        """Inputs for the loss graph on ``split`` ("train" or "test")."""
        if split not in ("train", "test"):
            raise ValueError(f"unknown split {split!r}")
        if self.quadratic is not None:
            q = self.quadratic
            if split == "train":
                return {"A": q.A, "b": q.b}
            return {"A": q.A_test, "b": q.b_test}
        data = self.train if split == "train" else self.test
        if data is None or len(data) == 0:
            raise ValueError(f"task {self.id} has an empty {split} split")
        return {"x": data.x, "y": data.y}


@dataclass(frozen=True)
class TaskDistribution:
    """Parameters of a task family P(T).

    ``dim`` is the parameter dimension for quadratics and the feature
    dimension for Gaussian classes; sinusoids are always 1-d inputs.
    ``shots`` is K, the number of train pairs (per class for
    classification); ``test_shots`` defaults to ``shots``.
    """
    kind: str = "quadratic"
    dim: int = 50
    kappa: float = 50.0
    ways: int = 5
    shots: int = 10
    test_shots: int | None = None
    base_seed: int = 0
    amplitude_range: tuple = (0.1, 5.0)
    phase_range: tuple = (0.0, float(np.pi))
    x_range: tuple = (-5.0, 5.0)
    class_radius: float = 3.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unsupported task kind {self.kind!r}; "
                              f"expected one of {KINDS}", path="tasks.kind")
        if self.kappa < 1:
            raise ConfigError("condition number kappa must be >= 1", path="tasks.kappa")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1", path="tasks.dim")
        if self.ways < 2:
            raise ConfigError("ways (N) must be >= 2", path="tasks.ways")
        if self.shots < 1:
            raise ConfigError("shots (K) must be >= 1", path="tasks.shots")
        if self.test_shots is not None and self.test_shots < 1:
            raise ConfigError("test_shots must be >= 1", path="tasks.test_shots")

    @property
    def n_test(self):
        return self.shots if self.test_shots is None else self.test_shots


def _rng(*key):
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def _haar_orthogonal(d, rng):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _spectrum(d, kappa, rng):
    if d == 1:
        if kappa != 1:
            raise ConfigError("a 1-d quadratic cannot have condition number != 1")
        return np.ones(1)
    ev = np.exp(rng.uniform(0.0, np.log(kappa), size=d))
    ev[0], ev[-1] = 1.0, kappa
    return ev


def _psd(d, kappa, rng):
    q = _haar_orthogonal(d, rng)
    a = (q * _spectrum(d, kappa, rng)) @ q.T
    return 0.5 * (a + a.T)


def make_quadratic_task(d, kappa, seed, task_id=None):
    """Random quadratic regression task with a prescribed condition number.

    ``A = Q diag(lam) Q'`` with Q Haar-orthogonal and ``lam`` log-uniform on
    [1, kappa], the two endpoints always present so that cond(A) == kappa.
    ``b`` is standard normal. The test loss gets an independent draw of the
    same law.
    """
    if d < 1:
        raise ConfigError("d must be >= 1")
    if kappa < 1:
        raise ConfigError("condition number kappa must be >= 1")
    rng = np.random.default_rng(seed)
    a = _psd(d, kappa, rng)
    b = rng.standard_normal(d)
    a_test = _psd(d, kappa, rng)
    b_test = rng.standard_normal(d)
    tid = task_id if task_id is not None else f"quadratic/{seed}"
    return Task(tid, "quadratic",
                quadratic=QuadraticPayload(a, b, a_test, b_test),
                meta={"kappa": float(kappa)})


def _disjoint_uniform(rng, low, high, n_train, n_test):
    x_train = rng.uniform(low, high, size=n_train)
    x_test = rng.uniform(low, high, size=n_test)
    while np.intersect1d(x_train, x_test).size:
        clash = np.isin(x_test, x_train)
        x_test[clash] = rng.uniform(low, high, size=int(clash.sum()))
    return x_train, x_test


def make_sinusoid_task(dist, rng, task_id):
    amp = rng.uniform(*dist.amplitude_range)
    phase = rng.uniform(*dist.phase_range)
    x_tr, x_te = _disjoint_uniform(rng, *dist.x_range, dist.shots, dist.n_test)

    def split(x):
        x = x.reshape(-1, 1)
        return Split(x, amp * np.sin(x + phase))

    return Task(task_id, "sinusoid", split(x_tr), split(x_te),
                meta={"amplitude": float(amp), "phase": float(phase)})


def make_gaussian_classes_task(dist, rng, task_id):
    means = rng.standard_normal((dist.ways, dist.dim))
    means *= dist.class_radius / np.linalg.norm(means, axis=1, keepdims=True)

    def draw(per_class):
        labels = np.repeat(np.arange(dist.ways), per_class)
        return means[labels] + rng.standard_normal((labels.size, dist.dim)), labels

    x_tr, y_tr = draw(dist.shots)
    x_te, y_te = draw(dist.n_test)
    return Task(task_id, "gaussian-classes", Split(x_tr, y_tr), Split(x_te, y_te),
                meta={"ways": dist.ways})


def sample_tasks(dist, count, seed):
    """Draw ``count`` tasks; task ``i`` depends only on (dist, seed, i)."""
    if count < 1:
        raise ConfigError("count must be >= 1")
    if dist.kind not in KINDS:
        raise ConfigError(f"unsupported task kind {dist.kind!r}")
    tasks = []
    for i in range(count):
        rng = _rng(dist.base_seed, seed, i)
        tid = f"{dist.kind}/{seed}/{i}"
        if dist.kind == "quadratic":
            tasks.append(make_quadratic_task(dist.dim, dist.kappa, rng, task_id=tid))
        elif dist.kind == "sinusoid":
            tasks.append(make_sinusoid_task(dist, rng, tid))
        else:
            tasks.append(make_gaussian_classes_task(dist, rng, tid))
    return tasks


# -- JSON form ---------------------------------------------------------------

def _split_to_json(split):
    if split is None:
        return None
    x = np.asarray(split.x, dtype=float).reshape(len(split), -1)
    y = np.asarray(split.y)
    ys = y.reshape(len(split), -1) if y.ndim > 1 else y
    return [[row.tolist(), yi.tolist()] for row, yi in zip(x, ys)]


def _split_from_json(rows, kind):
    if rows is None:
        return None
    x = np.array([r[0] for r in rows], dtype=float)
    if kind == "gaussian-classes":
        y = np.array([r[1] for r in rows], dtype=np.int64)
    else:
        y = np.array([r[1] for r in rows], dtype=float).reshape(len(rows), -1)
    return Split(x, y)


def task_to_dict(task):
    out = {"id": task.id, "kind": task.kind,
           "train": _split_to_json(task.train),
           "test": _split_to_json(task.test),
           "meta": task.meta}
    if task.quadratic is not None:
        q = task.quadratic
        out["quadratic"] = {"dim": q.dim,
                            "A": q.A.ravel().tolist(), "b": q.b.tolist(),
                            "A_test": q.A_test.ravel().tolist(),
                            "b_test": q.b_test.tolist()}
    return out


def task_from_dict(obj):
    quad = None
    if obj.get("quadratic") is not None:
        q = obj["quadratic"]
        d = q["dim"]
        quad = QuadraticPayload(np.array(q["A"], dtype=float).reshape(d, d),
                                np.array(q["b"], dtype=float),
                                np.array(q["A_test"], dtype=float).reshape(d, d),
                                np.array(q["b_test"], dtype=float))
    return Task(obj["id"], obj["kind"],
                _split_from_json(obj.get("train"), obj["kind"]),
                _split_from_json(obj.get("test"), obj["kind"]),
                quad, dict(obj.get("meta", {})))


def dumps(tasks):
    return json.dumps([task_to_dict(t) for t in tasks])


def loads(text):
    return [task_from_dict(o) for o in json.loads(text)]
