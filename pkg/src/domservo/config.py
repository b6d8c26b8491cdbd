"""Plain-text run configuration.

Flat `key = value` sections parsed with configparser:

    [run]         RunConfig fields (task, controller, seed, episode_len,
                  out_dir, tolerance, pre_roll, max_step, solve_tol,
                  save_frames, recipe)
    [controller]  free-form hyperparameters, passed through as RunConfig.hyper
    [sweep]       axis, values (comma list), seeds (comma list)
    [train]       forest-training knobs for the train-forest subcommand

Values are parsed as int, then float, then bool (true/false), then string.
Unknown [run] keys raise ConfigError so typos fail loudly.
"""

import configparser

from .errors import ConfigError
from .episode import RunConfig

_RUN_KEYS = ("task", "controller", "seed", "episode_len", "out_dir",
             "tolerance", "recipe", "pre_roll", "max_step", "solve_tol",
             "save_frames")

_TRAIN_DEFAULTS = {"iterations": 20, "per_iter": 40, "episode_len": 10,
                   "eval_episodes": 7, "fraction": 0.8}


def parse_value(text: str):
    """int, then float, then bool, then verbatim string."""
    t = text.strip()
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        pass
    if t.lower() in ("true", "false"):
        return t.lower() == "true"
    return t


def parse_recipe(text: str):
    """Recipe syntax: entries split on ';', each `name` or `name:k=v,k=v`.

    Example: "centroid; distance:i=0,j=-1,squared=true"
    """
    recipe = []
    for entry in text.split(";"):
        entry = entry.strip()
        if not entry:
            continue
        if ":" in entry:
            name, args = entry.split(":", 1)
            params = {}
            for kv in args.split(","):
                if "=" not in kv:
                    raise ConfigError(f"recipe parameter {kv!r} is not k=v")
                k, v = kv.split("=", 1)
                params[k.strip()] = parse_value(v)
            recipe.append((name.strip(), params))
        else:
            recipe.append((entry, None))
    if not recipe:
        raise ConfigError("empty recipe")
    return tuple(recipe)


def _read(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return cp


def load_run_config(path=None, overrides=None) -> RunConfig:
    """Defaults <- config file <- CLI overrides, validated at the end."""
    fields = {"task": None, "controller": None}
    hyper = {}
    if path is not None:
        cp = _read(path)
        for key, raw in (cp["run"].items() if cp.has_section("run") else ()):
            if key not in _RUN_KEYS:
                raise ConfigError(f"unknown [run] key {key!r}")
            fields[key] = parse_recipe(raw) if key == "recipe" else \
                parse_value(raw)
        if cp.has_section("controller"):
            hyper = {k: parse_value(v) for k, v in cp["controller"].items()}
    for key, val in (overrides or {}).items():
        if val is not None:
            fields[key] = val
    if fields.get("task") is None or fields.get("controller") is None:
        raise ConfigError("task and controller are required "
                          "(config [run] section or flags)")
    try:
        cfg = RunConfig(hyper=hyper, **fields)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def load_sweep_config(path):
    """Returns (axis, values, seeds) from the [sweep] section."""
    cp = _read(path)
    if not cp.has_section("sweep"):
        raise ConfigError("sweep needs a [sweep] section")
    sec = cp["sweep"]
    axis = sec.get("axis")
    if not axis:
        raise ConfigError("[sweep] axis is required")
    raw = sec.get("values", "")
    values = [parse_value(v) for v in raw.split(",") if v.strip()]
    if not values:
        raise ConfigError("[sweep] values is required (comma list)")
    seeds = [parse_value(v) for v in sec.get("seeds", "0").split(",")
             if v.strip()]
    if any(not isinstance(s, int) or s < 0 for s in seeds):
        raise ConfigError("[sweep] seeds must be nonnegative integers")
    return axis.strip(), values, seeds


def load_train_config(path=None) -> dict:
    out = dict(_TRAIN_DEFAULTS)
    if path is not None:
        cp = _read(path)
        if cp.has_section("train"):
            for key, raw in cp["train"].items():
                if key not in _TRAIN_DEFAULTS:
                    raise ConfigError(f"unknown [train] key {key!r}")
                out[key] = parse_value(raw)
    return out
