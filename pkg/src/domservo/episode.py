"""Closed-loop benchmark episodes.

A run wires one task plant, one feature recipe, and one controller into
the loop render -> extract -> control -> clamp -> solve, logging feature
error, actions, and per-phase wall-clock.  Goals are generated by a
seeded scripted pre-roll from the rest state, so every goal is reachable
by construction; for the dictionary controller that same pre-roll doubles
as the demonstration trajectory.
"""

import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import solve_equilibrium
from .errors import ConfigError, DomServoError, UnknownTask
from .features import HowConfig, default_bank, extract, recipe_needs_image
from .fogpr import GpHyperParams, GpModel, predict, update
from .forest import load_forest, predict_action as forest_predict
from .imitation import IL_VARIANTS, ClothIlEnv
from .linear_baseline import AdaptiveLinear, linear_baseline_step
from .mesh import CLOTH_H, CLOTH_W, DeformableMesh, GraspCommand, clamp_step, \
    make_task_mesh
from .render import CameraSpec, render, save_pgm
from .servo_dict import GoalSet, TrajectoryLog, build_dictionary, \
    sample_velocity_pairs, servo_step, sparse_code, predict_action as \
    dict_predict

log = logging.getLogger("domservo.episode")

CONTROLLERS = ("dict", "fogpr", "forest", "linear-baseline")

# below-tolerance steps required before declaring convergence
CONVERGE_STREAK = 5

SCHEMA_EPISODE = "domservo-episode-1"


def _how_cfg(grid=8):
    return HowConfig(grid_sizes=(grid,), magnitude=False, bank=default_bank())


def _cloth_camera(image_size=48):
    return CameraSpec(center=(CLOTH_W / 2, CLOTH_H / 2, 1.0),
                      view_axis=(0.0, 0.0, -1.0), up=(0.0, 1.0, 0.0),
                      image_width=image_size, image_height=image_size,
                      world_window=(0.8, 0.8), mode="depth")


def _span_camera(mesh: DeformableMesh):
    lo = mesh.positions.min(axis=0)
    hi = mesh.positions.max(axis=0)
    mid = 0.5 * (lo + hi)
    side = float(max(hi[0] - lo[0], hi[1] - lo[1]) + 0.6)
    return CameraSpec(center=(mid[0], mid[1], mid[2] + 1.0),
                      view_axis=(0.0, 0.0, -1.0), up=(0.0, 1.0, 0.0),
                      image_width=64, image_height=64,
                      world_window=(side, side), mode="depth")


@dataclass(frozen=True)
class TaskSpec:
    """Plant wiring for one benchmark task: which manipulated particles the
    robot commands (the rest stay scripted at their start positions), the
    feature recipe, and the success tolerance in feature units."""
    name: str
    mesh_name: str
    resolution: tuple
    robot: tuple                     # particle ids commanded by the controller
    recipe: tuple
    tolerance: float


def task_spec(name: str) -> TaskSpec:
    if name == "rope-bend":
        return TaskSpec(name, "rope-bend", (10, 1), (0, 9),
                        (("centroid", None),
                         ("distance", {"i": 0, "j": -1, "squared": True})),
                        5e-3)
    if name == "sheet-bend":
        return TaskSpec(name, "sheet-bend", (7, 8), (0, 6),
                        (("centroid", None), ("surface-variation", None)),
                        5e-3)
    if name == "peg-in-hole":
        return TaskSpec(name, "peg-in-hole", (7, 8), (0, 6),
                        (("positions", None),), 2e-3)
    if name == "flatten":
        return TaskSpec(name, "cloth-rect", (7, 8), (0, 6),
                        (("how", {"config": _how_cfg()}),), 5e-3)
    raise UnknownTask(f"no benchmark task named {name!r}")


SERVO_TASKS = ("rope-bend", "sheet-bend", "peg-in-hole", "flatten")
CLOTH_TASKS = IL_VARIANTS


@dataclass
class RunConfig:
    """One episode: task plant, controller, determinism seed, outputs."""
    task: str
    controller: str
    seed: int = 0
    episode_len: int = 600
    out_dir: str = None
    tolerance: float = None          # default: task registry value
    recipe: tuple = None             # default: task registry recipe
    hyper: dict = field(default_factory=dict)
    pre_roll: int = 80               # scripted steps generating the goal
    max_step: float = 0.02
    solve_tol: float = 1e-5
    save_frames: bool = False

    def validate(self):
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"unknown controller {self.controller!r}")
        if self.task in CLOTH_TASKS:
            if self.controller != "forest":
                raise ConfigError(
                    f"task {self.task} runs the forest controller only")
        elif self.task in SERVO_TASKS:
            if self.controller == "forest":
                raise ConfigError(
                    "the forest controller runs on the cloth-* tasks only")
        else:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.episode_len < 1:
            raise ConfigError("episode_len must be >= 1")
        if self.pre_roll < 0:
            raise ConfigError("pre_roll must be >= 0")
        if self.pre_roll < 2 and self.controller == "dict":
            raise ConfigError("the dict controller needs pre_roll >= 2 "
                              "(the pre-roll is its demonstration)")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")


@dataclass
class EpisodeLog:
    task: str
    controller: str
    seed: int
    tolerance: float
    episode_len: int
    errors: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    success: list = field(default_factory=list)
    timings: list = field(default_factory=list)   # (feature, control, solve) s
    converged: bool = False
    steps_to_converge: int = -1
    extra: dict = field(default_factory=dict)

    @property
    def final_error(self) -> float:
        return self.errors[-1] if self.errors else float("nan")

    @property
    def steps_executed(self) -> int:
        return len(self.errors)


# -- controller drivers --------------------------------------------------------


class _FogprDriver:
    """FO-GPR servo: random bootstrap, then GP queries capped at the stored
    response envelope (keeps the regression interpolative), with
    variance-gated re-exploration."""

    def __init__(self, hyper, d_s, d_r, max_step):
        self.hp = GpHyperParams(
            sigma_n=float(hyper.get("sigma_n", 0.001)),
            sigma_rbf=float(hyper.get("sigma_rbf", 0.6)),
            capacity=int(hyper.get("capacity", 300)),
            eta=float(hyper.get("eta", 1.0)),
            mean_mode=hyper.get("mean_mode", "zero"),
            sgd_rate=float(hyper.get("sgd_rate", 0.05)))
        self.model = GpModel(self.hp, d_s, d_r)
        self.bootstrap = int(hyper.get("bootstrap", 30))
        self.explore_var = float(hyper.get("explore_var", 0.5))
        self.query_cap = float(hyper.get("query_cap", 1.0))
        self.max_step = max_step
        self.d_r = d_r
        self._q_env = 0.0
        self._step = 0

    def act(self, s, s_goal, rng):
        self._step += 1
        if self._step <= self.bootstrap:
            return rng.uniform(-self.max_step, self.max_step, self.d_r)
        q = self.hp.eta * (s_goal.values - s.values)
        qn = float(np.linalg.norm(q))
        cap = self.query_cap * self._q_env
        if qn > cap > 0.0:
            q = q * (cap / qn)
        mu, var = predict(self.model, q)
        if var > self.explore_var:
            return rng.uniform(-self.max_step, self.max_step, self.d_r)
        return clamp_step(mu, self.max_step)

    def learn(self, ds, dr):
        self._q_env = max(self._q_env, float(np.linalg.norm(ds)))
        update(self.model, ds, dr)


class _LinearDriver:
    """Fixed-matrix or adaptive-Jacobian linear servo.  The adaptive variant
    shares the FO-GPR bootstrap so comparisons start from the same data."""

    def __init__(self, hyper, d_s, d_r, max_step):
        self.adaptive = bool(hyper.get("adaptive", True))
        self.eta = float(hyper.get("eta", 1.0))
        self.max_step = max_step
        self.d_r = d_r
        self._step = 0
        if self.adaptive:
            self.ctrl = AdaptiveLinear(d_r, d_s, eta=self.eta,
                                       sgd_rate=float(hyper.get("sgd_rate", 50.0)))
            self.bootstrap = int(hyper.get("bootstrap", 30))
            self.matrix = None
        else:
            self.ctrl = None
            self.bootstrap = 0
            m = hyper.get("matrix")
            self.matrix = None if m is None else np.asarray(m, dtype=np.float64)
            if self.matrix is None and d_s != d_r:
                raise ConfigError(
                    "fixed linear baseline needs a matrix when dims differ")

    def act(self, s, s_goal, rng):
        self._step += 1
        if self._step <= self.bootstrap:
            return rng.uniform(-self.max_step, self.max_step, self.d_r)
        if self.adaptive:
            return self.ctrl.action(s.values, s_goal.values,
                                    max_step=self.max_step)
        return linear_baseline_step(s.values, s_goal.values, self.eta,
                                    matrix=self.matrix, max_step=self.max_step)

    def learn(self, ds, dr):
        if self.adaptive:
            self.ctrl.update(ds, dr)


class _DictDriver:
    """Dictionary servo built from the goal pre-roll demonstration.

    The demonstration pairs are forward differences (an action and the
    feature change it produced), so the query that moves features toward
    the goal is s* - s: the default gain is -1.
    """

    def __init__(self, hyper, demo: TrajectoryLog, s_goal, rng):
        self.alpha = float(hyper.get("alpha", 0.01))
        self.eta = float(hyper.get("eta", -1.0))
        n_dic = int(hyper.get("n_dic", 16))
        n_samples = int(hyper.get("n_samples", 60))
        ds, dr = sample_velocity_pairs(demo, n_samples, lambda o: o, rng)
        self.dic = build_dictionary(ds, dr, n_dic, rng, alpha=self.alpha,
                                    layout=demo.observations[0].layout)
        self.goals = GoalSet([s_goal])
        self.frame_rate = demo.frame_rate
        self.velocity_error = _dict_velocity_error(
            self.dic, demo, n_samples, float(hyper.get("query_noise", 1.0)),
            rng)

    def act(self, s, s_goal, rng):
        v = servo_step(self.dic, s, self.goals, eta=self.eta)
        return v / self.frame_rate

    def learn(self, ds, dr):
        pass


def _dict_velocity_error(dic, demo, n_samples, noise, rng) -> float:
    """Mean prediction error on held-out demonstration pairs whose feature
    velocities carry seeded sensing noise (relative scale `noise`)."""
    ds, dr = sample_velocity_pairs(demo, n_samples, lambda o: o, rng)
    sigma = noise * float(np.sqrt(np.mean(ds * ds)))
    q = ds + rng.normal(0.0, sigma, size=ds.shape)
    errs = [float(np.linalg.norm(dict_predict(dic, sparse_code(dic, q[i])) - dr[i]))
            for i in range(len(q))]
    return float(np.mean(errs))


# -- the servo loop --------------------------------------------------------------


def _features(recipe, mesh, cam):
    if recipe_needs_image(recipe) or cam is not None:
        obs = render(mesh, cam)
        fp = obs.feedback_positions
        return extract(recipe, feedback_positions=fp, image=obs.image,
                       mask=obs.mask), obs
    fp = mesh.positions[mesh.feedback_indices()]
    return extract(recipe, feedback_positions=fp), None


def _solve(mesh, targets, tol):
    mesh.positions = solve_equilibrium(
        mesh, GraspCommand(targets, max_step=np.inf), tol_grad=tol)
    return mesh


class _Setup:
    """Settled plant plus the resolved recipe/tolerance/camera for one run."""

    def __init__(self, cfg: RunConfig):
        spec = task_spec(cfg.task)
        self.recipe = cfg.recipe if cfg.recipe is not None else spec.recipe
        self.tolerance = cfg.tolerance if cfg.tolerance is not None else \
            spec.tolerance
        self.mesh = make_task_mesh(spec.mesh_name, spec.resolution)
        man = self.mesh.manipulated_indices()
        self.robot = np.array([int(np.flatnonzero(man == pid)[0])
                               for pid in spec.robot])
        self.cam = None
        if recipe_needs_image(self.recipe):
            self.cam = _cloth_camera() if spec.mesh_name == "cloth-rect" \
                else _span_camera(self.mesh)
        self.targets = self.mesh.positions[man].copy()
        self.mesh = _solve(self.mesh, self.targets, cfg.solve_tol)
        self.s0, _ = _features(self.recipe, self.mesh, self.cam)


def _preroll(cfg: RunConfig, rng, st: _Setup):
    """Scripted random walk of the robot hands on a plant copy; defines the
    goal (its endpoint) and the demonstration trajectory."""
    gmesh, gt = st.mesh.copy(), st.targets.copy()
    demo_obs, demo_cfg = [st.s0], [gt[st.robot].ravel().copy()]
    for _ in range(cfg.pre_roll):
        step_d = rng.uniform(-cfg.max_step, cfg.max_step,
                             size=(len(st.robot), 3))
        gt[st.robot] = gt[st.robot] + step_d
        gmesh = _solve(gmesh, gt, cfg.solve_tol)
        fv, _ = _features(st.recipe, gmesh, st.cam)
        demo_obs.append(fv)
        demo_cfg.append(gt[st.robot].ravel().copy())
    return demo_obs, demo_cfg


def demo_trajectory(cfg: RunConfig) -> TrajectoryLog:
    """The seeded pre-roll demonstration an episode would generate."""
    cfg.validate()
    if cfg.task in CLOTH_TASKS:
        raise ConfigError("cloth-* tasks have no pre-roll demonstration")
    rng = np.random.default_rng(cfg.seed)
    st = _Setup(cfg)
    demo_obs, demo_cfg = _preroll(cfg, rng, st)
    return TrajectoryLog(demo_obs, np.array(demo_cfg))


def build_demo_dictionary(cfg: RunConfig):
    """The dictionary a dict-controller episode would build from its
    pre-roll, without running the servo loop.  Returns (dictionary,
    held-out velocity error)."""
    cfg.validate()
    if cfg.controller != "dict":
        raise ConfigError("build_demo_dictionary needs the dict controller")
    rng = np.random.default_rng(cfg.seed)
    st = _Setup(cfg)
    demo_obs, demo_cfg = _preroll(cfg, rng, st)
    demo = TrajectoryLog(demo_obs, np.array(demo_cfg))
    driver = _DictDriver(cfg.hyper, demo, demo_obs[-1], rng)
    return driver.dic, driver.velocity_error


def run_episode(cfg: RunConfig) -> EpisodeLog:
    """Execute one closed-loop episode per the configured protocol.

    Terminates early once the feature error stays below tolerance for
    CONVERGE_STREAK consecutive steps.  Module errors propagate with step
    context attached.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    if cfg.task in CLOTH_TASKS:
        return _run_cloth(cfg, rng)
    st = _Setup(cfg)
    mesh, targets, robot, cam = st.mesh, st.targets, st.robot, st.cam
    recipe, tol, s0 = st.recipe, st.tolerance, st.s0
    d_r = 3 * len(robot)

    demo_obs, demo_cfg = _preroll(cfg, rng, st)
    s_goal = demo_obs[-1]

    log_ = EpisodeLog(cfg.task, cfg.controller, cfg.seed, tol, cfg.episode_len)
    if cfg.controller == "fogpr":
        driver = _FogprDriver(cfg.hyper, len(s0.values), d_r, cfg.max_step)
    elif cfg.controller == "linear-baseline":
        driver = _LinearDriver(cfg.hyper, len(s0.values), d_r, cfg.max_step)
    else:
        demo = TrajectoryLog(demo_obs, np.array(demo_cfg))
        driver = _DictDriver(cfg.hyper, demo, s_goal, rng)
        log_.extra["velocity_error"] = driver.velocity_error

    frames_dir = None
    if cfg.save_frames and cfg.out_dir:
        frames_dir = os.path.join(cfg.out_dir, "frames")
        os.makedirs(frames_dir, exist_ok=True)
        if cam is None:
            cam = _span_camera(mesh)

    s = s0
    streak = 0
    for step in range(cfg.episode_len):
        try:
            t0 = time.perf_counter()
            a = clamp_step(np.asarray(driver.act(s, s_goal, rng),
                                      dtype=np.float64), cfg.max_step)
            t1 = time.perf_counter()
            targets[robot] = targets[robot] + a.reshape(-1, 3)
            mesh = _solve(mesh, targets, cfg.solve_tol)
            t2 = time.perf_counter()
            s_new, obs = _features(recipe, mesh, cam)
            t3 = time.perf_counter()
            driver.learn(s_new.values - s.values, a)
        except DomServoError as exc:
            raise type(exc)(f"step {step}: {exc}") from exc
        if frames_dir is not None:
            if obs is None:
                obs = render(mesh, cam)
            save_pgm(obs.image, f"{frames_dir}/{step:04d}.pgm")
        s = s_new
        err = float(np.linalg.norm(s.values - s_goal.values))
        ok = err < tol
        streak = streak + 1 if ok else 0
        log_.errors.append(err)
        log_.actions.append(a)
        log_.success.append(ok)
        log_.timings.append((t3 - t2, t1 - t0, t2 - t1))
        if streak >= CONVERGE_STREAK:
            log_.converged = True
            log_.steps_to_converge = step + 1
            break
    return log_


def _run_cloth(cfg: RunConfig, rng) -> EpisodeLog:
    """Forest controller on a cloth imitation task with scripted hands.

    Logs the controller-vs-expert action error each step; convergence uses
    the same consecutive-below-tolerance rule in action units.
    """
    path = cfg.hyper.get("forest_path")
    if not path:
        raise ConfigError("forest episodes need hyper forest_path")
    ctrl = load_forest(path)
    env = ClothIlEnv(cfg.task, max_step=cfg.max_step)
    tol = cfg.tolerance if cfg.tolerance is not None else 5e-3
    log_ = EpisodeLog(cfg.task, cfg.controller, cfg.seed, tol, cfg.episode_len)
    pose = cfg.hyper.get("pose")
    x = env.reset(rng, pose=None if pose is None else int(pose))
    streak = 0
    for step in range(cfg.episode_len):
        t0 = time.perf_counter()
        a_star = env.expert_action()
        a = forest_predict(ctrl, x)
        t1 = time.perf_counter()
        x = env.step(a, rng)
        t2 = time.perf_counter()
        err = float(np.linalg.norm(a - a_star))
        ok = err < tol
        streak = streak + 1 if ok else 0
        log_.errors.append(err)
        log_.actions.append(np.asarray(a, dtype=np.float64))
        log_.success.append(ok)
        log_.timings.append((0.0, t1 - t0, t2 - t1))
        if streak >= CONVERGE_STREAK:
            log_.converged = True
            log_.steps_to_converge = step + 1
            break
    return log_


# -- artifact writers -------------------------------------------------------------


def episode_csv(log_: EpisodeLog) -> str:
    d_r = len(log_.actions[0]) if log_.actions else 0
    head = ["step", "err"] + [f"dr{i}" for i in range(d_r)] + ["success"]
    lines = [",".join(head)]
    for i, (e, a, ok) in enumerate(zip(log_.errors, log_.actions, log_.success)):
        row = [str(i), repr(e)] + [repr(float(v)) for v in a] + [str(int(ok))]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def timings_csv(log_: EpisodeLog) -> str:
    lines = ["step,feature_s,control_s,solve_s"]
    for i, (tf, tc, ts) in enumerate(log_.timings):
        lines.append(f"{i},{tf!r},{tc!r},{ts!r}")
    return "\n".join(lines) + "\n"


def summary_dict(log_: EpisodeLog) -> dict:
    out = {
        "schema": SCHEMA_EPISODE,
        "task": log_.task,
        "controller": log_.controller,
        "seed": log_.seed,
        "tolerance": log_.tolerance,
        "episode_len": log_.episode_len,
        "steps_executed": log_.steps_executed,
        "converged": log_.converged,
        "steps_to_converge": log_.steps_to_converge,
        "final_error": log_.final_error,
    }
    out.update(log_.extra)
    return out


def summary_json(log_: EpisodeLog) -> str:
    return json.dumps(summary_dict(log_), sort_keys=True, indent=2) + "\n"


def write_outputs(log_: EpisodeLog, out_dir: str):
    """episode.csv + summary.json are deterministic for a fixed RunConfig;
    wall-clock lives in timings.csv only."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "episode.csv"), "w") as fh:
        fh.write(episode_csv(log_))
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        fh.write(summary_json(log_))
    with open(os.path.join(out_dir, "timings.csv"), "w") as fh:
        fh.write(timings_csv(log_))


_SUMMARY_KEYS = ("schema", "task", "controller", "seed", "tolerance",
                 "episode_len", "steps_executed", "converged",
                 "steps_to_converge", "final_error")


def read_outputs(out_dir: str) -> EpisodeLog:
    """Rebuild an EpisodeLog from a run directory (exact for the fields the
    writers emit; summary keys beyond the schema land in extra)."""
    with open(os.path.join(out_dir, "summary.json")) as fh:
        summary = json.load(fh)
    log_ = EpisodeLog(summary["task"], summary["controller"], summary["seed"],
                      summary["tolerance"], summary["episode_len"],
                      converged=summary["converged"],
                      steps_to_converge=summary["steps_to_converge"])
    log_.extra = {k: v for k, v in summary.items() if k not in _SUMMARY_KEYS}
    with open(os.path.join(out_dir, "episode.csv")) as fh:
        rows = fh.read().splitlines()
    for line in rows[1:]:
        cells = line.split(",")
        log_.errors.append(float(cells[1]))
        log_.actions.append(np.array([float(v) for v in cells[2:-1]]))
        log_.success.append(cells[-1] == "1")
    with open(os.path.join(out_dir, "timings.csv")) as fh:
        rows = fh.read().splitlines()
    for line in rows[1:]:
        cells = line.split(",")
        log_.timings.append(tuple(float(v) for v in cells[1:]))
    return log_
