"""Parameter sweeps and aggregate reports over episode logs.

A sweep clones a template RunConfig along one axis and runs one episode
per (value, seed).  The capacity axis additionally measures synthetic
per-update time at full memory: converged episodes stop long before a
300-point memory fills, so episode wall-clock alone cannot expose the
update cost scaling.
"""

import dataclasses
import json
import time

import numpy as np

from .episode import EpisodeLog, RunConfig, run_episode
from .errors import ConfigError
from .fogpr import GpHyperParams, GpModel, update

SCHEMA_REPORT = "domservo-report-1"

# hyper keys the sweep axis may name, per controller
_HYPER_AXES = {
    "dict": ("alpha", "n_dic", "n_samples", "eta", "query_noise"),
    "fogpr": ("sigma_n", "sigma_rbf", "capacity", "eta", "bootstrap",
              "explore_var", "query_cap", "sgd_rate"),
    "linear-baseline": ("eta", "sgd_rate", "bootstrap"),
}

_RUN_AXES = ("episode_len", "pre_roll", "max_step", "tolerance", "seed",
             "solve_tol")


def update_timing(capacity: int, d_s: int = 4, d_r: int = 4,
                  steps: int = None, seed: int = 0) -> np.ndarray:
    """Per-update wall-clock seconds for a GP memory driven to capacity.

    Random (state, action) pairs keep the memory growing, then replacing;
    the returned array has one entry per update so the flat-cost regime
    past step `capacity` is directly visible.
    """
    if steps is None:
        steps = 5 * capacity
    rng = np.random.default_rng(seed)
    hp = GpHyperParams(capacity=capacity)
    model = GpModel(hp, d_s, d_r)
    out = np.zeros(steps)
    for i in range(steps):
        s = 0.1 * rng.standard_normal(d_s)
        r = 0.1 * rng.standard_normal(d_r)
        t0 = time.perf_counter()
        update(model, s, r)
        out[i] = time.perf_counter() - t0
    return out


def _clone(cfg: RunConfig) -> RunConfig:
    return dataclasses.replace(cfg, hyper=dict(cfg.hyper))


def sweep(cfg_template: RunConfig, axis: str, values, seeds) -> list:
    """One run_episode per (value, seed); returns one row dict per run."""
    if not values:
        raise ConfigError("sweep needs at least one value")
    if axis in _RUN_AXES:
        into_hyper = False
    elif axis in _HYPER_AXES.get(cfg_template.controller, ()):
        into_hyper = True
    else:
        raise ConfigError(
            f"axis {axis!r} is not a config field of the "
            f"{cfg_template.controller} controller")
    rows = []
    for value in values:
        upd_ms = None
        if axis == "capacity":
            t = update_timing(int(value))
            upd_ms = float(np.median(t[int(value):]) * 1e3)
        for seed in seeds:
            cfg = _clone(cfg_template)
            cfg.seed = int(seed)
            if into_hyper:
                cfg.hyper[axis] = value
            else:
                setattr(cfg, axis, value)
            log = run_episode(cfg)
            row = {
                "axis": axis, "value": value, "seed": int(seed),
                "task": log.task, "controller": log.controller,
                "converged": int(log.converged),
                "steps_to_converge": log.steps_to_converge,
                "steps_executed": log.steps_executed,
                "final_error": log.final_error,
            }
            if "velocity_error" in log.extra:
                row["velocity_error"] = log.extra["velocity_error"]
            if upd_ms is not None:
                row["update_ms_full"] = upd_ms
            rows.append(row)
    return rows


def sweep_csv(rows: list) -> str:
    if not rows:
        raise ConfigError("no sweep rows to serialize")
    cols = list(rows[0].keys())
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    lines = [",".join(cols)]
    for r in rows:
        cells = []
        for c in cols:
            v = r.get(c, "")
            cells.append(repr(v) if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# -- aggregate report -------------------------------------------------------------


def _percentiles(samples):
    if not samples:
        return {"p50": 0.0, "p90": 0.0}
    arr = np.asarray(samples)
    return {"p50": float(np.percentile(arr, 50)),
            "p90": float(np.percentile(arr, 90))}


def report(logs: list) -> dict:
    """Success rates, median steps-to-converge, and per-phase timing
    percentiles, grouped by (task, controller).  Schema versioned."""
    if not logs:
        raise ConfigError("report needs at least one log")
    groups = {}
    for lg in logs:
        groups.setdefault((lg.task, lg.controller), []).append(lg)
    out_groups = []
    for (task, controller) in sorted(groups):
        ls = groups[(task, controller)]
        conv = [lg for lg in ls if lg.converged]
        steps = sorted(lg.steps_to_converge for lg in conv)
        feature, control, solve = [], [], []
        for lg in ls:
            for tf, tc, tsv in lg.timings:
                feature.append(tf)
                control.append(tc)
                solve.append(tsv)
        out_groups.append({
            "task": task,
            "controller": controller,
            "runs": len(ls),
            "success_rate": len(conv) / len(ls),
            "median_steps_to_converge":
                float(np.median(steps)) if steps else -1.0,
            "median_final_error":
                float(np.median([lg.final_error for lg in ls])),
            "timing_s": {"feature": _percentiles(feature),
                         "control": _percentiles(control),
                         "solve": _percentiles(solve)},
        })
    return {"schema": SCHEMA_REPORT, "runs": len(logs), "groups": out_groups}


def report_json(rep: dict) -> str:
    return json.dumps(rep, sort_keys=True, indent=2) + "\n"


def report_csv(rep: dict) -> str:
    cols = ["task", "controller", "runs", "success_rate",
            "median_steps_to_converge", "median_final_error",
            "control_p50_s", "solve_p50_s"]
    lines = [",".join(cols)]
    for g in rep["groups"]:
        lines.append(",".join([
            g["task"], g["controller"], str(g["runs"]),
            repr(g["success_rate"]), repr(g["median_steps_to_converge"]),
            repr(g["median_final_error"]),
            repr(g["timing_s"]["control"]["p50"]),
            repr(g["timing_s"]["solve"]["p50"]),
        ]))
    return "\n".join(lines) + "\n"
