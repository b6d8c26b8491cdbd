"""Command-line entry point.

Subcommands: run, sweep, train-forest, build-dict, report.
Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .config import load_run_config, load_sweep_config, load_train_config
from .episode import (RunConfig, build_demo_dictionary, read_outputs,
                      run_episode, summary_dict, write_outputs)
from .errors import ConfigError, DomServoError
from .forest import save_forest
from .imitation import IL_VARIANTS, ClothIlEnv, il_train
from .servo_dict import save_dictionary
from .sweep import report, report_csv, report_json, sweep, sweep_csv

log = logging.getLogger("domservo.cli")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="domservo",
        description="Deformable-object manipulation control benchmarks")
    p.add_argument("-v", "--verbose", action="store_true",
                   help="log at INFO instead of WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", metavar="PATH",
                        help="plain-text config file")
        sp.add_argument("--seed", type=int, metavar="N")
        sp.add_argument("--out", metavar="DIR", help=out_help)
        sp.add_argument("--task", metavar="NAME")
        sp.add_argument("--controller", metavar="NAME")

    sp = sub.add_parser("run", help="run one closed-loop episode")
    common(sp, "write episode.csv, summary.json, timings.csv here")
    sp.add_argument("--episode-len", type=int, metavar="N")
    sp.add_argument("--frames", action="store_true",
                    help="save rendered frames as PGM")

    sp = sub.add_parser("sweep", help="run one episode per axis value per seed")
    common(sp, "write sweep.csv here")

    sp = sub.add_parser("train-forest",
                        help="imitation-train a forest on a cloth task")
    common(sp, "write forest.csv and metrics.json here")

    sp = sub.add_parser("build-dict",
                        help="build a servo dictionary from the pre-roll demo")
    common(sp, "write dictionary.csv here")

    sp = sub.add_parser("report", help="aggregate finished run directories")
    common(sp, "write report.json and report.csv here (default: stdout)")
    sp.add_argument("runs", nargs="+", metavar="RUN_DIR",
                    help="directories produced by `domservo run`")
    return p


def _overrides(args, **extra):
    out = {"task": args.task, "controller": args.controller,
           "seed": args.seed, "out_dir": args.out}
    out.update(extra)
    return out


def _cmd_run(args) -> int:
    cfg = load_run_config(args.config, _overrides(
        args, episode_len=args.episode_len,
        save_frames=True if args.frames else None))
    lg = run_episode(cfg)
    if cfg.out_dir:
        write_outputs(lg, cfg.out_dir)
        log.info("wrote %s", cfg.out_dir)
    print(json.dumps(summary_dict(lg), sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    if not args.config:
        raise ConfigError("sweep needs --config with a [sweep] section")
    axis, values, seeds = load_sweep_config(args.config)
    cfg = load_run_config(args.config, _overrides(args))
    rows = sweep(cfg, axis, values, seeds)
    text = sweep_csv(rows)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "sweep.csv")
        with open(path, "w") as fh:
            fh.write(text)
        print(path)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_train_forest(args) -> int:
    task = args.task
    if task not in IL_VARIANTS:
        raise ConfigError(
            f"train-forest task must be one of {IL_VARIANTS}, got {task!r}")
    if not args.out:
        raise ConfigError("train-forest needs --out")
    knobs = load_train_config(args.config)
    env = ClothIlEnv(task)
    rng = np.random.default_rng(args.seed or 0)
    ctrl, metrics = il_train(env, rng, **knobs)
    os.makedirs(args.out, exist_ok=True)
    save_forest(ctrl, os.path.join(args.out, "forest.csv"))
    payload = {"schema": "domservo-train-1", "task": task,
               "seed": args.seed or 0,
               "action_errors": metrics.action_errors,
               "leaf_totals": metrics.leaf_totals,
               "n_classes": metrics.n_classes,
               "n_samples": metrics.n_samples}
    with open(os.path.join(args.out, "metrics.json"), "w") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    print(os.path.join(args.out, "forest.csv"))
    return 0


def _cmd_build_dict(args) -> int:
    if not args.out:
        raise ConfigError("build-dict needs --out")
    cfg = load_run_config(args.config, _overrides(args, controller="dict"))
    dic, vel_err = build_demo_dictionary(cfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "dictionary.csv")
    save_dictionary(dic, path)
    print(json.dumps({"path": path, "velocity_error": vel_err},
                     sort_keys=True))
    return 0


def _cmd_report(args) -> int:
    logs = [read_outputs(d) for d in args.runs]
    rep = report(logs)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.json"), "w") as fh:
            fh.write(report_json(rep))
        with open(os.path.join(args.out, "report.csv"), "w") as fh:
            fh.write(report_csv(rep))
        print(os.path.join(args.out, "report.json"))
    else:
        sys.stdout.write(report_json(rep))
    return 0


_COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep,
             "train-forest": _cmd_train_forest, "build-dict": _cmd_build_dict,
             "report": _cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DomServoError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
