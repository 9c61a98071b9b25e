"""Command-line entry point.

Usage::

    imaml validate --config cfg.json
    imaml train --config cfg.json --seed 3 --out runs/a
    imaml compare-metagrad --config cfg.json --format csv
    imaml verify-oracle
    imaml eval --config cfg.json --checkpoint runs/a/checkpoint.bin

Exit status is 0 on success, 2 when the config is invalid and 1 for any
other failure; failures print a JSON object on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from . import trainer
from .errors import ConfigError, IMAMLError
from .oracle import verify_suite
from .tasks import sample_tasks
from .telemetry import compare_methods

COMMANDS = ("train", "compare-metagrad", "verify-oracle", "eval", "validate")


def _parser():
    p = argparse.ArgumentParser(prog="imaml", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON experiment config (defaults when omitted)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--workers", type=int, help="parallel per-task workers; 1 is serial")
    p.add_argument("--format", choices=("csv", "json"),
                   help="emit only this table format (default: the config's formats)")
    p.add_argument("--resume", help="train: continue from this checkpoint")
    p.add_argument("--checkpoint", help="eval: take theta from this checkpoint")
    return p


def _resolve(args):
    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except FileNotFoundError as err:
            raise ConfigError(f"config file not found: {args.config}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from err
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer", path="seed")
    if args.out is not None:
        raw = {**raw, "out": args.out}
    if args.workers is not None:
        raw = {**raw, "workers": args.workers}
    if args.format is not None:
        raw = {**raw, "report": {**raw.get("report", {}), "formats": [args.format]}}
    return cfgmod.resolve(raw, seed=args.seed)


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _stamp(cfg):
    return {"config_hash": cfgmod.config_hash(cfg), "seed": cfg["seed"]}


def _write_resolved(cfg, out):
    body = {**_stamp(cfg), "config": dict(cfg), "provenance": cfg.provenance}
    _write(os.path.join(out, "config.resolved.json"),
           json.dumps(body, indent=2, sort_keys=True) + "\n")


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer, np.floating)):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def cmd_validate(cfg, args):
    print(_dump({**_stamp(cfg), "config": cfg.annotated()}), end="")
    return 0


def cmd_train(cfg, args):
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    _write_resolved(cfg, out)
    chash = cfgmod.config_hash(cfg)
    resume, warning = None, None
    if args.resume:
        ck = trainer.load_checkpoint(args.resume, expected_hash=chash)
        if ck.hash_mismatch:
            warning = (f"checkpoint config hash {ck.config_hash} differs from "
                       f"the current config hash {chash}")
            print(f"warning: {warning}", file=sys.stderr)
        resume = ck.state
    result = trainer.train(cfg, resume=resume)
    result.metrics.write(os.path.join(out, "metrics.csv"))
    trainer.save_checkpoint(os.path.join(out, "checkpoint.bin"), result.state, chash,
                            cfg["seed"])
    s = result.state
    summary = {**_stamp(cfg), "experiment": "train", "iterations": s.iteration,
               "outer_loss": s.outer_loss, "grad_norm": s.grad_norm,
               "grad_evals": s.grad_evals, "hvps": s.hvps, "peak_memory": s.peak_memory,
               "stopped_early": result.stopped_early, "warning": warning}
    _write(os.path.join(out, "results.json"), _dump(summary))
    return 0


def cmd_compare(cfg, args):
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    _write_resolved(cfg, out)
    if cfg["tasks"]["kind"] != "quadratic":
        raise ConfigError("compare-metagrad needs the quadratic family (exact oracle)",
                          path="tasks.kind")
    tasks = sample_tasks(trainer.distribution(cfg), cfg["tasks"]["pool_size"], cfg["seed"])
    theta = np.zeros(tasks[0].quadratic.dim)
    sw = cfg["sweep"]
    table = compare_methods(tasks, theta, cfg["method"]["lam"], sw["methods"],
                            sw["inner_steps"], sw["cg_steps"], cfg["report"]["wall_time"])
    stamp = _stamp(cfg)
    formats = cfg["report"]["formats"]
    if "csv" in formats:
        _write(os.path.join(out, "metrics.csv"),
               table.to_csv(f"config_hash={stamp['config_hash']} seed={stamp['seed']}"))
    if "json" in formats:
        _write(os.path.join(out, "results.json"),
               table.to_json(experiment="compare-metagrad", **stamp) + "\n")
    return 0


def cmd_verify(cfg, args):
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    _write_resolved(cfg, out)
    if cfg["tasks"]["kind"] != "quadratic":
        raise ConfigError("verify-oracle runs on the quadratic family", path="tasks.kind")
    tasks = sample_tasks(trainer.distribution(cfg), cfg["verify"]["count"], cfg["seed"])
    checks = verify_suite(tasks, cfg["method"]["lam"], h=cfg["verify"]["fd_step"])
    failures = [c for c in checks if not c["passed"]]
    summary = {**_stamp(cfg), "experiment": "verify-oracle", "checks": len(checks),
               "failures": len(failures), "failed": failures, "results": checks}
    _write(os.path.join(out, "results.json"), _dump(summary))
    print(json.dumps({"checks": len(checks), "failures": len(failures)}))
    return 0 if not failures else 1


def cmd_eval(cfg, args):
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    _write_resolved(cfg, out)
    model = trainer.build_model(cfg)
    if args.checkpoint:
        ck = trainer.load_checkpoint(args.checkpoint, cfgmod.config_hash(cfg))
        theta = ck.state.theta
    else:
        theta = trainer.initial_state(cfg, model).theta
    rows = trainer.evaluate_meta_test(model, theta, trainer.eval_tasks(cfg),
                                      cfg["method"]["lam"], trainer.inner_budget(cfg))
    losses = [r["loss"] for r in rows]
    summary = {**_stamp(cfg), "experiment": "eval", "mean_loss": float(np.mean(losses)),
               "tasks": rows}
    if rows and "accuracy" in rows[0]:
        summary["mean_accuracy"] = float(np.mean([r["accuracy"] for r in rows]))
    _write(os.path.join(out, "results.json"), _dump(summary))
    return 0


HANDLERS = {"train": cmd_train, "compare-metagrad": cmd_compare,
            "verify-oracle": cmd_verify, "eval": cmd_eval, "validate": cmd_validate}


def _fail(code, err):
    body = {"error": type(err).__name__, "message": str(err)}
    path = getattr(err, "path", None)
    if path:
        body["path"] = path
    print(json.dumps(body), file=sys.stderr)
    return code


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = _resolve(args)
    except ConfigError as err:
        return _fail(2, err)
    try:
        return HANDLERS[args.command](cfg, args)
    except ConfigError as err:
        return _fail(2, err)
    except (IMAMLError, OSError, ValueError) as err:
        return _fail(1, err)


if __name__ == "__main__":
    sys.exit(main())
