"""Outer loop: batch meta-gradients, average, update theta; metrics and checkpoints.

Randomness is keyed by ``(seed, purpose, iteration)``, so iteration ``k``
draws the same task batch whether the run started at 0 or resumed at ``k``.
"""
from __future__ import annotations

import io
import json
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import config_hash
from .errors import CheckpointError, ConfigError, IMAMLError
from .inner_solvers import InnerBudget, solve
from .meta_gradient import meta_gradient
from .models import InnerObjective, model_for
from .tasks import TaskDistribution, sample_tasks

CHECKPOINT_MAGIC = b"IMAMLCKP"
CHECKPOINT_VERSION = 1
METRIC_COLUMNS = ("iter", "outer_loss", "grad_norm", "grad_evals_cum", "hvps_cum",
                  "peak_mem_proxy", "wall_ms")

_INIT, _BATCH, _EVAL = 1, 2, 3


@dataclass
class OuterState:
    theta: np.ndarray
    iteration: int = 0
    optimizer: str = "sgd"
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    grad_evals: int = 0
    hvps: int = 0
    peak_memory: int = 0
    outer_loss: float = float("nan")
    grad_norm: float = float("nan")

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=float)
        if self.optimizer == "adam":
            if self.m is None:
                self.m = np.zeros_like(self.theta)
            if self.v is None:
                self.v = np.zeros_like(self.theta)


@dataclass(frozen=True)
class OuterSettings:
    lr: float = 0.1
    optimizer: str = "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("outer learning rate must be positive", path="outer.lr")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown outer optimizer {self.optimizer!r}",
                              path="outer.optimizer")


@dataclass
class StepReport:
    grad: np.ndarray
    reports: list = field(default_factory=list)


def apply_update(state, grad, settings):
    """Return the state after one optimizer step; ``state`` is left unchanged."""
    theta = state.theta
    m, v = state.m, state.v
    t = state.iteration + 1
    if settings.optimizer == "sgd":
        theta = theta - settings.lr * grad
    else:
        m = settings.beta1 * m + (1 - settings.beta1) * grad
        v = settings.beta2 * v + (1 - settings.beta2) * grad * grad
        m_hat = m / (1 - settings.beta1 ** t)
        v_hat = v / (1 - settings.beta2 ** t)
        theta = theta - settings.lr * m_hat / (np.sqrt(v_hat) + settings.eps)
    return OuterState(theta, t, settings.optimizer, m, v, state.grad_evals, state.hvps,
                      state.peak_memory, state.outer_loss, state.grad_norm)


def outer_step(state, tasks, engine, settings, workers=1):
    """Average ``engine(task, theta)`` over the batch and update theta.

    ``engine`` returns a :class:`MetaGradReport`. Per-task results are
    summed in batch order regardless of ``workers``.
    """
    if not tasks:
        raise ConfigError("task batch must be nonempty", path="outer.batch_size")

    def run(task):
        try:
            return engine(task, state.theta)
        except IMAMLError as err:
            err.task_id = task.id
            err.args = (f"task {task.id}: {err.args[0] if err.args else err}",) + err.args[1:]
            raise

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            reports = list(pool.map(run, tasks))
    else:
        reports = [run(t) for t in tasks]
    grad = np.zeros_like(state.theta)
    for r in reports:
        grad = grad + r.g
    grad = grad / len(reports)
    new = apply_update(state, grad, settings)
    new.grad_evals += sum(r.grad_evals for r in reports)
    new.hvps += sum(r.hvps for r in reports)
    new.peak_memory = max([state.peak_memory] + [r.peak_memory for r in reports])
    new.outer_loss = float(np.mean([r.test_loss for r in reports]))
    new.grad_norm = float(np.linalg.norm(grad))
    return new, StepReport(grad, reports)


# -- wiring from a resolved config --------------------------------------------

def distribution(cfg):
    t = cfg["tasks"]
    return TaskDistribution(kind=t["kind"], dim=t["dim"], kappa=t["kappa"], ways=t["ways"],
                            shots=t["shots"], test_shots=t["test_shots"],
                            base_seed=t["base_seed"],
                            amplitude_range=tuple(t["amplitude_range"]),
                            phase_range=tuple(t["phase_range"]),
                            x_range=tuple(t["x_range"]), class_radius=t["class_radius"])


def inner_budget(cfg):
    i = cfg["method"]["inner"]
    return InnerBudget(method=i["solver"], steps=i["steps"], lr=i["lr"],
                       cg_steps=i["cg_steps"], newton_reps=i["newton_reps"],
                       target_delta=i["target_delta"])


def outer_settings(cfg):
    o = cfg["outer"]
    return OuterSettings(lr=o["lr"], optimizer=o["optimizer"], beta1=o["beta1"],
                         beta2=o["beta2"], eps=o["eps"])


def build_model(cfg):
    return model_for(distribution(cfg), hidden=tuple(cfg["model"]["hidden"]),
                     activation=cfg["model"]["activation"])


def make_engine(cfg, model):
    m = cfg["method"]
    budget = inner_budget(cfg)

    def engine(task, theta):
        return meta_gradient(m["engine"], model, task, theta, m["lam"], budget,
                             cg_steps=m["cg"]["steps"], cg_tol=m["cg"]["tol"],
                             alpha=m["alpha"], on_curvature=m["cg"]["on_curvature"])
    return engine


def _rng(seed, purpose, *rest):
    return np.random.default_rng(np.random.SeedSequence([int(seed), purpose, *rest]))


def initial_state(cfg, model=None):
    model = build_model(cfg) if model is None else model
    theta = model.init_params(_rng(cfg["seed"], _INIT))
    return OuterState(theta, 0, cfg["outer"]["optimizer"])


def task_pool(cfg):
    return sample_tasks(distribution(cfg), cfg["tasks"]["pool_size"], cfg["seed"])


def batch_for(cfg, pool, iteration):
    """Task batch of outer iteration ``iteration``: all tasks, or a seeded subset."""
    size = cfg["outer"]["batch_size"]
    if size >= len(pool):
        return list(pool)
    idx = _rng(cfg["seed"], _BATCH, iteration).choice(len(pool), size, replace=False)
    return [pool[i] for i in idx]


# -- metrics log ------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


class MetricsLog:
    """CSV metrics writer; the first line records config hash and seed."""

    def __init__(self, chash, seed, wall_time=False):
        self.buf = io.StringIO()
        self.wall_time = wall_time
        self.buf.write(f"# config_hash={chash} seed={seed}\n")
        self.buf.write(",".join(METRIC_COLUMNS) + "\n")
        self.rows = []

    def append(self, state, wall_ms):
        row = (state.iteration, state.outer_loss, state.grad_norm, state.grad_evals,
               state.hvps, state.peak_memory, wall_ms if self.wall_time else 0)
        self.rows.append(row)
        self.buf.write(",".join(_fmt(x) for x in row) + "\n")

    def text(self):
        return self.buf.getvalue()

    def write(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.text())


@dataclass
class TrainResult:
    state: OuterState
    metrics: MetricsLog
    config_hash: str
    stopped_early: bool = False


def train(cfg, resume=None, callback=None):
    """Run the outer loop to ``cfg["outer"]["iterations"]``.

    Parameters
    ----------
    cfg : ResolvedConfig
    resume : OuterState, optional
        Continue from this state (its ``iteration`` must not exceed the budget).
    callback : callable, optional
        ``callback(state, step_report)`` after every update; returning True
        stops the run.
    """
    model = build_model(cfg)
    chash = config_hash(cfg)
    state = initial_state(cfg, model) if resume is None else resume
    total = cfg["outer"]["iterations"]
    if state.iteration > total:
        raise ConfigError(f"checkpoint is at iteration {state.iteration}, beyond the "
                          f"budget of {total}", path="outer.iterations")
    if state.theta.shape != (model.dim,):
        raise CheckpointError(f"checkpoint theta has {state.theta.shape[0]} entries, "
                              f"model needs {model.dim}")
    settings = outer_settings(cfg)
    engine = make_engine(cfg, model)
    pool = task_pool(cfg)
    log = MetricsLog(chash, cfg["seed"], cfg["report"]["wall_time"])
    tol = cfg["outer"]["grad_tol"]
    stopped = False
    while state.iteration < total:
        start = time.perf_counter()
        batch = batch_for(cfg, pool, state.iteration)
        state, report = outer_step(state, batch, engine, settings, cfg["workers"])
        log.append(state, round((time.perf_counter() - start) * 1000.0, 3))
        if callback is not None and callback(state, report):
            stopped = True
            break
        if tol > 0 and state.grad_norm <= tol:
            stopped = True
            break
    return TrainResult(state, log, chash, stopped)


# -- evaluation -------------------------------------------------------------

def evaluate_meta_test(model, theta, tasks, lam, inner):
    """Adapt to each task from ``theta`` and score on its test split.

    Returns one dict per task with ``loss`` and, for classification,
    ``accuracy`` (fraction of test points whose argmax matches the label).
    """
    out = []
    for task in tasks:
        obj = InnerObjective(model, task, theta, lam)
        res = solve(obj, inner)
        row = {"task": task.id, "loss": model.tape(res.phi, task, "test").value,
               "inner_iterations": res.iterations}
        if model.loss == "cross_entropy":
            pred = np.argmax(model.predict(res.phi, task.test.x), axis=1)
            row["accuracy"] = float(np.mean(pred == task.test.y))
        out.append(row)
    return out


def eval_tasks(cfg):
    """Held-out tasks for meta-test evaluation (disjoint seed stream from training)."""
    return sample_tasks(distribution(cfg), cfg["tasks"]["eval_tasks"],
                        int(_rng(cfg["seed"], _EVAL).integers(2 ** 63)))


# -- checkpoints ------------------------------------------------------------

def _checkpoint_bytes(state, chash, seed):
    arrays = {"theta": state.theta}
    if state.optimizer == "adam":
        arrays["m"], arrays["v"] = state.m, state.v
    header = {"format": "imaml-checkpoint", "version": CHECKPOINT_VERSION,
              "config_hash": chash, "seed": int(seed), "iteration": state.iteration,
              "optimizer": state.optimizer,
              "counters": {"grad_evals": state.grad_evals, "hvps": state.hvps,
                           "peak_memory": state.peak_memory},
              "metrics": {"outer_loss": _fmt(state.outer_loss),
                          "grad_norm": _fmt(state.grad_norm)},
              "arrays": [[k, int(a.shape[0])] for k, a in arrays.items()]}
    head = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays.values())
    return CHECKPOINT_MAGIC + struct.pack("<Q", len(head)) + head + body


def save_checkpoint(path, state, chash, seed):
    """Write ``magic | u64 header length | JSON header | little-endian f64 arrays``."""
    with open(path, "wb") as fh:
        fh.write(_checkpoint_bytes(state, chash, seed))


@dataclass
class Checkpoint:
    state: OuterState
    config_hash: str
    seed: int
    version: int
    hash_mismatch: bool = False


def load_checkpoint(path, expected_hash=None):
    """Read a checkpoint; sets ``hash_mismatch`` when ``expected_hash`` differs."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16:16 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"{path}: corrupt header ({err})") from err
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version "
                              f"{header.get('version')!r}, expected {CHECKPOINT_VERSION}")
    offset = 16 + n
    arrays = {}
    for name, length in header["arrays"]:
        end = offset + 8 * length
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated array {name!r}")
        arrays[name] = np.frombuffer(blob[offset:end], dtype="<f8").astype(float)
        offset = end
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    c = header["counters"]
    state = OuterState(arrays["theta"], header["iteration"], header["optimizer"],
                       arrays.get("m"), arrays.get("v"), c["grad_evals"], c["hvps"],
                       c["peak_memory"], float(header["metrics"]["outer_loss"]),
                       float(header["metrics"]["grad_norm"]))
    mismatch = expected_hash is not None and expected_hash != header["config_hash"]
    return Checkpoint(state, header["config_hash"], header["seed"], header["version"],
                      mismatch)
