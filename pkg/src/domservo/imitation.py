"""Imitation learning of cloth manipulation on the simulated benchmark.

A human-driven pair of cloth corners random-walks while a robot pair
tracks them under a task-specific geometric rule (straight, bent, or
twisted cloth).  A forest controller is trained by dataset aggregation:
episodes roll out under a mixture of expert and current controller,
every visited state is labeled with the expert action, and the forest
is rebuilt on the growing dataset each iteration.
"""

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import solve_equilibrium
from .errors import DegenerateHands, EnvFailure, NonConvergence, UnknownTask
from .features import HowConfig, default_bank, how_features
from .forest import (ForestParams, build_forest, default_bandwidth,
                     fit_leaves_quadratic, fit_leaves_sparse, mean_action_error,
                     meanshift_labels, predict_action)
from .mesh import CLOTH_H, CLOTH_W, GraspCommand, clamp_step, make_task_mesh
from .render import CameraSpec, render

log = logging.getLogger("domservo.imitation")

_Z = np.array([0.0, 0.0, 1.0])
_OFFSET = {"cloth-straight": 0.35, "cloth-bent": 0.175, "cloth-twisted": 0.175}
IL_VARIANTS = tuple(sorted(_OFFSET))
HAND_SEP_MAX = 0.3
HAND_SPEED_INF = 0.1

# Start poses of the hand pair: (dx, dy, rotation about the pair midpoint).
# Episodes begin at one of these, jittered, then random-walk; a discrete
# set of demonstration starts is what makes the expert's action
# distribution multimodal enough for mean-shift to find stable modes.
# Pose separation exceeds one feature grid cell (0.133 m world) so the
# modes stay distinguishable in feature space.
START_POSES = ((0.0, 0.0, 0.0),
               (0.15, 0.0, 0.0), (-0.15, 0.0, 0.0),
               (0.0, 0.15, 0.0), (0.0, -0.15, 0.0),
               (0.0, 0.0, 0.6), (0.0, 0.0, -0.6))
START_JITTER = 0.01


def expert_policy(task: str, v2: np.ndarray, v3: np.ndarray,
                  literal_sign: bool = False) -> np.ndarray:
    """Expert end-effector targets (v0, v1) for the human hand corners.

    n points from the robot edge toward the hands, so the grippers sit at
    v - offset*n and the initial flat layout is a fixed point of the
    straight expert.  literal_sign flips to the +offset*n convention.
    """
    if task not in _OFFSET:
        raise UnknownTask(task)
    v2 = np.asarray(v2, dtype=np.float64)
    v3 = np.asarray(v3, dtype=np.float64)
    c = np.cross(_Z, v3 - v2)
    nc = np.linalg.norm(c)
    if nc < 1e-9:
        raise DegenerateHands(f"hands give |z x (v3 - v2)| = {nc:.3g}")
    n = c / nc
    step = (_OFFSET[task] * n) if literal_sign else (-_OFFSET[task] * n)
    if task == "cloth-twisted":
        return np.concatenate([v3 + step, v2 + step])
    return np.concatenate([v2 + step, v3 + step])


def human_perturbation(rng: np.random.Generator, v2: np.ndarray, v3: np.ndarray,
                       dt: float = 1.0 / 30.0, speed: float = HAND_SPEED_INF,
                       max_sep: float = HAND_SEP_MAX):
    """One random-walk step of the hand pair.

    Each hand moves by a uniform step with inf-norm < speed*dt; the pair
    is resampled until the hands stay distinct and within max_sep of each
    other (the cloth would tear otherwise).
    """
    v2 = np.asarray(v2, dtype=np.float64)
    v3 = np.asarray(v3, dtype=np.float64)
    lim = speed * dt
    if lim <= 0.0:
        return v2.copy(), v3.copy()
    while True:
        s2 = rng.uniform(-lim, lim, 3)
        s3 = rng.uniform(-lim, lim, 3)
        if max(np.abs(s2).max(), np.abs(s3).max()) >= lim:
            continue
        n2 = v2 + s2
        n3 = v3 + s3
        sep = np.linalg.norm(n2 - n3)
        if 0.0 < sep <= max_sep:
            return n2, n3


class ClothIlEnv:
    """Cloth with four grasped corners under a top-down depth camera.

    State is the corner positions; every step re-solves the quasi-static
    equilibrium and the observation is the HOW feature vector of the
    rendered depth image.  Actions are absolute targets for the two robot
    corners, clamped to max_step per cycle.
    """

    def __init__(self, variant: str, resolution=(7, 8), image_size=48,
                 grid=8, frame_rate: float = 30.0, max_step: float = 0.02,
                 literal_sign: bool = False, solve_tol: float = 1e-6):
        if variant not in _OFFSET:
            raise UnknownTask(variant)
        self.variant = variant
        self.mesh = make_task_mesh("cloth-rect", resolution)
        self.corners = self.mesh.manipulated_indices()
        self.frame_rate = frame_rate
        self.max_step = max_step
        self.literal_sign = literal_sign
        self.solve_tol = solve_tol
        self.cam = CameraSpec(center=(CLOTH_W / 2, CLOTH_H / 2, 1.0),
                              view_axis=(0.0, 0.0, -1.0), up=(0.0, 1.0, 0.0),
                              image_width=image_size, image_height=image_size,
                              world_window=(0.8, 0.8), mode="depth")
        self.how_cfg = HowConfig(grid_sizes=(grid,), magnitude=False,
                                 bank=default_bank())
        self._rest = self.mesh.positions.copy()
        self.r0 = self.r1 = self.v2 = self.v3 = None

    @property
    def action_dim(self):
        return 6

    def expert_action(self) -> np.ndarray:
        return expert_policy(self.variant, self.v2, self.v3, self.literal_sign)

    def reset(self, rng: np.random.Generator, pose: int = None) -> np.ndarray:
        base2 = np.array([0.0, CLOTH_H, 0.0])
        base3 = np.array([CLOTH_W, CLOTH_H, 0.0])
        mid = 0.5 * (base2 + base3)
        if pose is None:
            pose = int(rng.integers(len(START_POSES)))
        dx, dy, phi = START_POSES[pose % len(START_POSES)]
        rot = np.array([[np.cos(phi), -np.sin(phi), 0.0],
                        [np.sin(phi), np.cos(phi), 0.0],
                        [0.0, 0.0, 1.0]])
        shift = np.array([dx, dy, 0.0])
        while True:
            off = np.zeros((2, 3))
            off[:, :2] = rng.uniform(-START_JITTER, START_JITTER, (2, 2))
            v2 = rot @ (base2 - mid) + mid + shift + off[0]
            v3 = rot @ (base3 - mid) + mid + shift + off[1]
            sep = np.linalg.norm(v2 - v3)
            if 0.0 < sep <= HAND_SEP_MAX and np.linalg.norm(
                    np.cross(_Z, v3 - v2)) >= 1e-6:
                break
        self.v2, self.v3 = v2, v3
        r = expert_policy(self.variant, v2, v3, self.literal_sign)
        self.r0, self.r1 = r[:3].copy(), r[3:].copy()
        self.mesh.positions = self._rest.copy()
        self._solve()
        return self.observe()

    def observe(self) -> np.ndarray:
        obs = render(self.mesh, self.cam)
        return how_features(obs.image, obs.mask, self.how_cfg).values

    def step(self, action: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        action = np.asarray(action, dtype=np.float64)
        self.r0 = self.r0 + clamp_step(action[:3] - self.r0, self.max_step)
        self.r1 = self.r1 + clamp_step(action[3:] - self.r1, self.max_step)
        self.v2, self.v3 = human_perturbation(rng, self.v2, self.v3,
                                              dt=1.0 / self.frame_rate)
        self._solve()
        return self.observe()

    def _solve(self):
        cmd = GraspCommand(np.vstack([self.r0, self.r1, self.v2, self.v3]),
                           max_step=np.inf)
        try:
            self.mesh.positions = solve_equilibrium(self.mesh, cmd,
                                                    tol_grad=self.solve_tol)
        except NonConvergence as exc:
            raise EnvFailure(f"equilibrium solve failed: {exc}") from None


@dataclass
class IlMetrics:
    """Per-iteration diagnostics of one training run."""
    action_errors: list = field(default_factory=list)
    leaf_totals: list = field(default_factory=list)
    n_classes: list = field(default_factory=list)
    n_samples: list = field(default_factory=list)


def _collect(env, rng, ctrl, need, fraction, episode_len, pure_expert, X, R):
    """Roll out mixture episodes until `need` labeled states are appended."""
    while need > 0:
        use_expert = pure_expert or ctrl is None or rng.random() < fraction
        try:
            x = env.reset(rng)
            for _ in range(min(episode_len, need)):
                a_star = env.expert_action()
                X.append(x)
                R.append(a_star)
                need -= 1
                a = a_star if use_expert else predict_action(ctrl, x)
                x = env.step(a, rng)
        except (EnvFailure, DegenerateHands) as exc:
            log.warning("episode aborted, keeping %d states: %s",
                        len(X), exc)


def _evaluate(env, rng, ctrl, episodes, episode_len):
    """Mean action error of ctrl on states it visits itself.

    Episodes cycle deterministically through the start poses so every
    iteration is scored against the same pose distribution.
    """
    Xe, Re = [], []
    for ep in range(episodes):
        try:
            x = env.reset(rng, pose=ep)
            for _ in range(episode_len):
                Xe.append(x)
                Re.append(env.expert_action())
                x = env.step(predict_action(ctrl, x), rng)
        except (EnvFailure, DegenerateHands) as exc:
            log.warning("eval episode aborted: %s", exc)
    if not Xe:
        return float("nan")
    return mean_action_error(ctrl, np.array(Xe), np.array(Re))


def _refit(ctrl, Xa, Ra):
    routes = ctrl.route_all(Xa)
    fit_leaves_quadratic(ctrl, Xa, Ra, routes=routes)
    fit_leaves_sparse(ctrl, Xa, Ra, routes=routes)


def expert_eval_set(env, rng: np.random.Generator, episodes: int = 7,
                    episode_len: int = 10):
    """Expert-driven labeled states for scoring controllers on common
    ground.  Episodes cycle through the start poses; the same seed gives
    the same states, so two controllers can be compared point for point."""
    Xe, Re = [], []
    for ep in range(episodes):
        try:
            x = env.reset(rng, pose=ep)
            for _ in range(episode_len):
                a = env.expert_action()
                Xe.append(x)
                Re.append(a)
                x = env.step(a, rng)
        except (EnvFailure, DegenerateHands) as exc:
            log.warning("eval-set episode aborted: %s", exc)
    return np.array(Xe), np.array(Re)


def il_train(env, rng: np.random.Generator, iterations: int = 20,
             per_iter: int = 500, fraction: float = 0.8, episode_len: int = 20,
             eval_episodes: int = 7, params: ForestParams = None,
             bandwidth: float = None, fixed_topology: bool = False):
    """Dataset-aggregation training loop.

    Per iteration: collect per_iter expert-labeled states under the
    mixture policy (iteration 1 is pure expert), relabel all actions by
    mean shift, rebuild the forest (unless fixed_topology, which freezes
    the first topology and only refits leaves), refit leaf actions and
    confidences, then measure the on-policy action error.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    if per_iter < 1:
        raise ValueError("per_iter must be >= 1")
    params = params or ForestParams()
    X, R = [], []
    ctrl = None
    bw = bandwidth
    metrics = IlMetrics()
    # Rebuilds share one construction seed (common random numbers), so
    # successive topologies differ only through data growth, not through
    # fresh bagging draws.
    build_seed = int(rng.integers(2 ** 63))
    for it in range(iterations):
        _collect(env, rng, ctrl, per_iter, fraction, episode_len,
                 pure_expert=(it == 0), X=X, R=R)
        Xa = np.array(X)
        Ra = np.array(R)
        if bw is None:
            bw = default_bandwidth(Ra)
        if ctrl is None or not fixed_topology:
            labels = meanshift_labels(Ra, bw)
            ctrl = build_forest(Xa, labels, np.random.default_rng(build_seed),
                                params)
            ctrl.bandwidth = bw
            metrics.n_classes.append(int(labels.max()) + 1)
        else:
            metrics.n_classes.append(metrics.n_classes[-1])
        _refit(ctrl, Xa, Ra)
        metrics.leaf_totals.append(ctrl.total_leaves)
        metrics.n_samples.append(len(Xa))
        metrics.action_errors.append(
            _evaluate(env, rng, ctrl, eval_episodes, episode_len))
    return ctrl, metrics


def _collect_shared(env, rng, ctrl, need, fraction, episode_len, pure_expert,
                    names, X, Rs):
    """Mixture rollouts that relabel every visited state with each task's
    expert action, so per-task leaf fits can share the full state set."""
    while need > 0:
        use_expert = pure_expert or ctrl is None or rng.random() < fraction
        try:
            x = env.reset(rng)
            for _ in range(min(episode_len, need)):
                a_star = env.expert_action()
                X.append(x)
                for u in names:
                    Rs[u].append(a_star if u == env.variant else
                                 expert_policy(u, env.v2, env.v3,
                                               env.literal_sign))
                need -= 1
                a = a_star if use_expert else predict_action(ctrl, x)
                x = env.step(a, rng)
        except (EnvFailure, DegenerateHands) as exc:
            log.warning("episode aborted, keeping %d states: %s",
                        len(X), exc)


def il_train_multitask(envs: dict, rng: np.random.Generator,
                       iterations: int = 20, per_iter: int = 500,
                       fraction: float = 0.8, episode_len: int = 20,
                       eval_episodes: int = 7, params: ForestParams = None,
                       bandwidth: float = None):
    """Joint training: one forest topology over the union of all tasks'
    data, with leaf actions and confidences fit separately per task.

    Every state visited under any task is relabeled with every task's
    expert action, so each per-task fit sees the whole state set and no
    leaf goes unsupervised.  Mode labels for the topology come from
    mean-shift on the concatenated per-task actions, so the shared trees
    resolve every task's mode boundaries, not just the collecting
    task's.  Returns ({task: controller view}, {task: IlMetrics}); the
    views share tree structure, so routing is identical across tasks.
    """
    params = params or ForestParams()
    names = sorted(envs)
    X_all = []
    Rs = {t: [] for t in names}
    views = {t: None for t in names}
    metrics = {t: IlMetrics() for t in names}
    bw = bandwidth
    build_seed = int(rng.integers(2 ** 63))
    for it in range(iterations):
        for t in names:
            _collect_shared(envs[t], rng, views[t], per_iter, fraction,
                            episode_len, it == 0, names, X_all, Rs)
        Xa = np.array(X_all)
        Rcat = np.hstack([np.array(Rs[t]) for t in names])
        if bw is None:
            bw = default_bandwidth(Rcat)
        labels = meanshift_labels(Rcat, bw)
        topo = build_forest(Xa, labels, np.random.default_rng(build_seed),
                            params)
        topo.bandwidth = bw
        routes = topo.route_all(Xa)
        for t in names:
            view = copy.copy(topo)
            Ra = np.array(Rs[t])
            fit_leaves_quadratic(view, Xa, Ra, routes=routes)
            fit_leaves_sparse(view, Xa, Ra, routes=routes)
            views[t] = view
            metrics[t].leaf_totals.append(view.total_leaves)
            metrics[t].n_classes.append(int(labels.max()) + 1)
            metrics[t].n_samples.append(len(Xa))
            metrics[t].action_errors.append(
                _evaluate(envs[t], rng, views[t], eval_episodes, episode_len))
    return views, metrics
