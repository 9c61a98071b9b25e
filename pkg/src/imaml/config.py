"""Experiment configuration: JSON schema, defaults with provenance, env overrides.

Every resolved field carries a provenance tag:

``paper-default``
    operating point published with the method (lam = 2.0, 5 CG steps, ...)
``artifact-default``
    a choice made by this package where no published value exists
``user``
    supplied by the config file or an environment variable

Environment variables ``IMAML__<block>__<key>=<json>`` override any key,
e.g. ``IMAML__method__lam=0.5`` or ``IMAML__outer__optimizer='"adam"'``.
Values are parsed as JSON and fall back to plain strings.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os

import jsonschema

from .errors import ConfigError

ENV_PREFIX = "IMAML__"
EXPERIMENTS = ("train", "compare-metagrad", "verify-oracle", "eval")

PAPER, ARTIFACT, USER = "paper-default", "artifact-default", "user"

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_count = {"type": "integer", "minimum": 0}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required)}


SCHEMA = _obj({
    "experiment": {"enum": list(EXPERIMENTS)},
    "preset": {"enum": ["default", "hard-toy"]},
    "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
    "workers": {"type": "integer", "minimum": 1},
    "tasks": _obj({
        "kind": {"enum": ["quadratic", "sinusoid", "gaussian-classes"]},
        "dim": {"type": "integer", "minimum": 1},
        "kappa": {"type": "number", "minimum": 1},
        "ways": {"type": "integer", "minimum": 2},
        "shots": {"type": "integer", "minimum": 1},
        "test_shots": {"type": "integer", "minimum": 1},
        "base_seed": {"type": "integer", "minimum": 0},
        "amplitude_range": _pair,
        "phase_range": _pair,
        "x_range": _pair,
        "class_radius": _pos,
        "pool_size": {"type": "integer", "minimum": 1},
        "eval_tasks": {"type": "integer", "minimum": 1},
    }),
    "model": _obj({
        "hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "activation": {"enum": ["tanh", "relu"]},
    }),
    "method": _obj({
        "engine": {"enum": ["imaml", "maml", "fomaml", "reptile"]},
        "lam": _pos,
        "alpha": _pos,
        "inner": _obj({
            "solver": {"enum": ["gd", "agd", "newton-cg"]},
            "steps": _count,
            "lr": _pos,
            "cg_steps": _count,
            "newton_reps": _count,
            "target_delta": _pos,
        }),
        "cg": _obj({"steps": _count, "tol": {"type": "number", "minimum": 0},
                    "on_curvature": {"enum": ["raise", "truncate"]}}),
    }),
    "outer": _obj({
        "optimizer": {"enum": ["sgd", "adam"]},
        "lr": _pos,
        "iterations": _count,
        "batch_size": {"type": "integer", "minimum": 1},
        "grad_tol": {"type": "number", "minimum": 0},
        "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "eps": _pos,
    }),
    "sweep": _obj({
        "methods": {"type": "array", "items": {"enum": ["imaml", "maml", "fomaml", "reptile"]},
                    "minItems": 1},
        "inner_steps": {"type": "array", "items": _count, "minItems": 1},
        "cg_steps": {"type": "array", "items": _count, "minItems": 1},
    }),
    "verify": _obj({"count": {"type": "integer", "minimum": 1},
                    "fd_step": _pos}),
    "report": _obj({
        "formats": {"type": "array", "items": {"enum": ["csv", "json"]}},
        "wall_time": {"type": "boolean"},
    }),
    "out": {"type": "string"},
})

# (value, provenance); nested dicts mirror the schema
DEFAULTS = {
    "experiment": ("train", ARTIFACT),
    "preset": ("default", ARTIFACT),
    "seed": (0, ARTIFACT),
    "workers": (1, ARTIFACT),
    "tasks": {
        "kind": ("quadratic", ARTIFACT),
        "dim": (50, PAPER),
        "kappa": (50.0, PAPER),
        "ways": (5, PAPER),
        "shots": (1, PAPER),
        "test_shots": (None, ARTIFACT),
        "base_seed": (0, ARTIFACT),
        "amplitude_range": ([0.1, 5.0], ARTIFACT),
        "phase_range": ([0.0, 3.141592653589793], ARTIFACT),
        "x_range": ([-5.0, 5.0], ARTIFACT),
        "class_radius": (3.0, ARTIFACT),
        "pool_size": (8, ARTIFACT),
        "eval_tasks": (20, ARTIFACT),
    },
    "model": {
        "hidden": ([40, 40], ARTIFACT),
        "activation": ("tanh", ARTIFACT),
    },
    "method": {
        "engine": ("imaml", ARTIFACT),
        "lam": (2.0, PAPER),
        "alpha": (None, ARTIFACT),
        "inner": {
            "solver": ("gd", ARTIFACT),
            "steps": (16, PAPER),
            "lr": (None, ARTIFACT),
            "cg_steps": (5, PAPER),
            "newton_reps": (3, PAPER),
            "target_delta": (None, ARTIFACT),
        },
        "cg": {"steps": (5, PAPER), "tol": (1e-10, ARTIFACT),
               "on_curvature": ("raise", ARTIFACT)},
    },
    "outer": {
        "optimizer": ("sgd", ARTIFACT),
        "lr": (0.1, ARTIFACT),
        "iterations": (100, ARTIFACT),
        "batch_size": (8, ARTIFACT),
        "grad_tol": (0.0, ARTIFACT),
        "beta1": (0.9, ARTIFACT),
        "beta2": (0.999, ARTIFACT),
        "eps": (1e-8, ARTIFACT),
    },
    "sweep": {
        "methods": (["imaml", "maml", "fomaml", "reptile"], ARTIFACT),
        "inner_steps": ([4, 16, 64, 256], ARTIFACT),
        "cg_steps": ([0, 1, 2, 5, 10], ARTIFACT),
    },
    "verify": {"count": (10, ARTIFACT), "fd_step": (1e-5, ARTIFACT)},
    "report": {"formats": (["csv", "json"], ARTIFACT), "wall_time": (False, ARTIFACT)},
    "out": ("out", ARTIFACT),
}

PRESETS = {
    "default": {},
    # harder toy operating point: weaker prior, more inner steps
    "hard-toy": {("method", "lam"): 0.5, ("method", "inner", "steps"): 10},
}

# keys that do not change results and are left out of the config hash
_UNHASHED = ("out", "workers", "report")


def _validation_error(err):
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "additionalProperties":
        known = set(err.schema.get("properties", {}))
        extra = sorted(set(err.instance) - known)
        key = extra[0] if extra else "?"
        path = f"{path}.{key}" if path else key
        return ConfigError(f"unknown key {path!r}", path=path)
    return ConfigError(f"{path or '<root>'}: {err.message}", path=path or None)


def validate(raw):
    """Schema-check a raw config dict; raises :class:`ConfigError`."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        raise _validation_error(errors[0])


def _env_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def env_overrides(environ=None):
    """Nested dict from ``IMAML__a__b=value`` variables."""
    environ = os.environ if environ is None else environ
    out = {}
    for name, text in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        keys = name[len(ENV_PREFIX):].split("__")
        if not all(keys):
            raise ConfigError(f"malformed override variable {name!r}")
        node = out
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {name!r} conflicts with a scalar key")
        node[keys[-1]] = _env_value(text)
    return out


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _resolve(defaults, user, prefix=()):
    values, tags = {}, {}
    for key, spec in defaults.items():
        path = prefix + (key,)
        sub = user.get(key) if isinstance(user, dict) else None
        if isinstance(spec, dict):
            values[key], tags[key] = _resolve(spec, sub or {}, path)
        elif isinstance(user, dict) and key in user:
            values[key], tags[key] = copy.deepcopy(user[key]), USER
        else:
            values[key], tags[key] = copy.deepcopy(spec[0]), spec[1]
    return values, tags


def _set(tree, path, value):
    for k in path[:-1]:
        tree = tree[k]
    tree[path[-1]] = value


def _get(tree, path):
    for k in path:
        tree = tree[k]
    return tree


class ResolvedConfig(dict):
    """Fully populated config; ``provenance`` mirrors its nesting."""

    def __init__(self, values, provenance):
        super().__init__(values)
        self.provenance = provenance

    def hash(self):
        return config_hash(self)

    def annotated(self):
        """``{"value": ..., "source": ...}`` leaves, for display."""
        def walk(v, t):
            if isinstance(v, dict):
                return {k: walk(v[k], t[k]) for k in v}
            return {"value": v, "source": t}
        return walk(dict(self), self.provenance)


def resolve(raw=None, environ=None, seed=None):
    """Validate ``raw`` plus env overrides and fill defaults.

    ``seed`` (from the command line) wins over both.
    """
    raw = {} if raw is None else raw
    merged = _merge(raw, env_overrides(environ))
    if seed is not None:
        merged["seed"] = seed
    validate(merged)
    values, tags = _resolve(DEFAULTS, merged)
    for path, value in PRESETS[values["preset"]].items():
        if _get(tags, path) != USER:
            _set(values, path, value)
            _set(tags, path, PAPER)
    cfg = ResolvedConfig(values, tags)
    _check_semantics(cfg)
    return cfg


def _check_semantics(cfg):
    lo, hi = cfg["tasks"]["x_range"]
    if not lo < hi:
        raise ConfigError("x_range must be increasing", path="tasks.x_range")
    a_lo, a_hi = cfg["tasks"]["amplitude_range"]
    if not 0 <= a_lo <= a_hi:
        raise ConfigError("amplitude_range must be 0 <= low <= high",
                          path="tasks.amplitude_range")
    if cfg["tasks"]["kind"] == "quadratic" and cfg["tasks"]["dim"] == 1 \
            and cfg["tasks"]["kappa"] != 1:
        raise ConfigError("a 1-d quadratic needs kappa = 1", path="tasks.kappa")


def load(path, environ=None, seed=None):
    """Read, validate and resolve a JSON config file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    return resolve(raw, environ, seed)


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg):
    """SHA-256 (hex, 16 chars) over the result-relevant part of the config."""
    body = {k: v for k, v in dict(cfg).items() if k not in _UNHASHED}
    return hashlib.sha256(canonical_json(body).encode()).hexdigest()[:16]
