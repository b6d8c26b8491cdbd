"""Visual feedback dictionary: sparse-coding controller.

A dictionary of (feature velocity, configuration velocity) atoms is
distilled from a recorded trajectory by k-means; at runtime a feature
query is sparse-coded over the atoms with a lasso and the action is the
matching combination of configuration velocities.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (DimensionMismatch, EmptyGoalSet, InvalidParam,
                     KMeansDegenerate, LayoutMismatch, TooShort)
from .features import FeatureVector

log = logging.getLogger("domservo.servo_dict")

LASSO_GAP_TOL = 1e-8
LASSO_MAX_SWEEPS = 100000
RIDGE_JITTER = 1e-12


@dataclass
class TrajectoryLog:
    """Recorded rollout: one opaque observation payload and one end-effector
    configuration per frame, at a fixed frame rate."""
    observations: list
    configs: np.ndarray              # (N, dr)
    frame_rate: float = 30.0

    def __post_init__(self):
        self.configs = np.asarray(self.configs, dtype=np.float64)
        if self.frame_rate <= 0:
            raise InvalidParam("frame rate must be positive")
        if len(self.observations) != len(self.configs):
            raise InvalidParam("observation/config counts disagree")

    def __len__(self):
        return len(self.observations)


def sample_velocity_pairs(traj: TrajectoryLog, count: int, extractor,
                          rng: np.random.Generator, return_indices: bool = False):
    """Draw index pairs (l, l') uniformly and form finite-difference velocities

        ds = (s(l) - s(l')) / ((l - l') / frameRate)
        dr = (r(l) - r(l')) / ((l - l') / frameRate)

    Pairs with l = l' are redrawn.  Returns (ds, dr) arrays of shape
    (count, .); with return_indices also the (count, 2) index array.
    """
    n_frames = len(traj)
    if n_frames < 2:
        raise TooShort(f"trajectory has {n_frames} frames")
    if count < 1:
        raise InvalidParam("count must be >= 1")
    cache = {}

    def feat(i):
        if i not in cache:
            cache[i] = extractor(traj.observations[i]).values
        return cache[i]

    idx = np.zeros((count, 2), dtype=np.int64)
    ds_rows, dr_rows = [], []
    for p in range(count):
        a = int(rng.integers(0, n_frames))
        b = int(rng.integers(0, n_frames))
        while a == b:
            a = int(rng.integers(0, n_frames))
            b = int(rng.integers(0, n_frames))
        idx[p] = (a, b)
        dt = (a - b) / traj.frame_rate
        ds_rows.append((feat(a) - feat(b)) / dt)
        dr_rows.append((traj.configs[a] - traj.configs[b]) / dt)
    ds = np.vstack(ds_rows)
    dr = np.vstack(dr_rows)
    if return_indices:
        return ds, dr, idx
    return ds, dr


# -- k-means -------------------------------------------------------------------

def _kmeans(x: np.ndarray, k: int, rng: np.random.Generator, iters: int = 100):
    """Lloyd iterations from a k-means++ seed; empty clusters reseed to the
    point farthest from its center.  Returns (centers, labels)."""
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(0, n))
    centers[0] = x[first]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = x[int(rng.integers(0, n))]
        else:
            r = rng.random() * total
            centers[j] = x[int(np.searchsorted(np.cumsum(d2), r).clip(0, n - 1))]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        dist = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(dist, axis=1)
        for j in range(k):
            sel = new_labels == j
            if np.any(sel):
                centers[j] = x[sel].mean(axis=0)
            else:
                worst = int(np.argmax(dist[np.arange(n), new_labels]))
                centers[j] = x[worst]
                new_labels[worst] = j
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return centers, labels


@dataclass
class VisualFeedbackDictionary:
    atoms_s: np.ndarray              # (N_dic, ds) raw sampled feature velocities
    atoms_r: np.ndarray              # (N_dic, dr) matching config velocities
    alpha: float = 0.01              # runtime sparse-coding weight
    layout: list = field(default_factory=list)
    _gram: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.atoms_s = np.asarray(self.atoms_s, dtype=np.float64)
        self.atoms_r = np.asarray(self.atoms_r, dtype=np.float64)
        if len(self.atoms_s) != len(self.atoms_r):
            raise InvalidParam("atom count mismatch")
        if self.alpha < 0:
            raise InvalidParam("alpha must be >= 0")

    def gram(self) -> np.ndarray:
        if self._gram is None:
            self._gram = self.atoms_s @ self.atoms_s.T
        return self._gram

    def __len__(self):
        return len(self.atoms_s)


def build_dictionary(ds: np.ndarray, dr: np.ndarray, n_dic: int,
                     rng: np.random.Generator, alpha: float = 0.01,
                     layout=None) -> VisualFeedbackDictionary:
    """Cluster the sampled feature velocities with k-means and keep, per
    center, the nearest raw sample pair.  Atoms are raw samples, never
    synthetic centroids."""
    ds = np.asarray(ds, dtype=np.float64)
    dr = np.asarray(dr, dtype=np.float64)
    if n_dic < 1:
        raise InvalidParam("n_dic must be >= 1")
    distinct = np.unique(ds, axis=0)
    if len(distinct) < n_dic:
        raise KMeansDegenerate(
            f"{len(distinct)} distinct samples < {n_dic} requested atoms")
    centers, _ = _kmeans(ds, n_dic, rng)
    chosen = []
    taken = set()
    for j in range(n_dic):
        order = np.argsort(np.sum((ds - centers[j]) ** 2, axis=1), kind="stable")
        pick = next(int(i) for i in order if int(i) not in taken)
        taken.add(pick)
        chosen.append(pick)
    chosen = np.array(chosen, dtype=np.int64)
    return VisualFeedbackDictionary(ds[chosen].copy(), dr[chosen].copy(),
                                    alpha=alpha, layout=layout or [])


# -- sparse coding ---------------------------------------------------------------

def sparse_code(dic: VisualFeedbackDictionary, query: np.ndarray,
                alpha: float = None) -> np.ndarray:
    """Coefficients of  min_b |q - sum_i b_i ds_i|^2 + alpha |b|_1.

    alpha = 0 degenerates to least squares with a tiny ridge.
    """
    query = np.asarray(query, dtype=np.float64).ravel()
    if query.shape[0] != dic.atoms_s.shape[1]:
        raise DimensionMismatch(
            f"query dim {query.shape[0]} != atom dim {dic.atoms_s.shape[1]}")
    a = dic.alpha if alpha is None else alpha
    if a < 0:
        raise InvalidParam("alpha must be >= 0")
    gram = dic.gram()
    dty = dic.atoms_s @ query
    if a == 0.0:
        return np.linalg.solve(gram + RIDGE_JITTER * np.eye(len(dic)), dty)
    return kernels.lasso_cd(gram, dty, float(query @ query), a,
                            LASSO_MAX_SWEEPS, LASSO_GAP_TOL)


def predict_action(dic: VisualFeedbackDictionary, beta: np.ndarray) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64)
    if len(beta) != len(dic):
        raise DimensionMismatch("coefficient count != atom count")
    return beta @ dic.atoms_r


# -- goal handling ---------------------------------------------------------------

@dataclass
class GoalSet:
    goals: list                       # FeatureVector per goal
    mode: str = "single"              # single | hidden | sequential
    costs: np.ndarray = None          # sequential selection costs
    goal_tol: float = 1e-3
    consumed: np.ndarray = None

    def __post_init__(self):
        if not self.goals:
            raise EmptyGoalSet("goal set is empty")
        if self.mode not in ("single", "hidden", "sequential"):
            raise InvalidParam(f"unknown goal mode {self.mode!r}")
        if self.mode == "single" and len(self.goals) != 1:
            raise InvalidParam("single mode takes exactly one goal")
        if self.costs is None:
            self.costs = np.zeros(len(self.goals))
        self.costs = np.asarray(self.costs, dtype=np.float64)
        if len(self.costs) != len(self.goals):
            raise InvalidParam("cost count != goal count")
        if self.consumed is None:
            self.consumed = np.zeros(len(self.goals), dtype=bool)


def servo_step(dic: VisualFeedbackDictionary, s: FeatureVector, goals: GoalSet,
               eta: float = 1.0) -> np.ndarray:
    """One dictionary-servo control step; returns the config velocity.

    single:     code eta (s - s*) and predict.
    hidden:     evaluate every goal, return the minimum-norm prediction.
    sequential: pick argmin cost + |prediction|, consume near goals.
    """
    for g in goals.goals:
        if g.layout != s.layout:
            raise LayoutMismatch("goal layout differs from the current features")
    if goals.mode == "single":
        q = eta * (s.values - goals.goals[0].values)
        return predict_action(dic, sparse_code(dic, q))
    actions = []
    norms = []
    for g in goals.goals:
        q = eta * (s.values - g.values)
        a = predict_action(dic, sparse_code(dic, q))
        actions.append(a)
        norms.append(float(np.linalg.norm(a)))
    if goals.mode == "hidden":
        return actions[int(np.argmin(norms))]
    active = np.flatnonzero(~goals.consumed)
    if len(active) == 0:
        raise EmptyGoalSet("all sequential goals consumed")
    scores = [goals.costs[i] + norms[i] for i in active]
    i_star = int(active[int(np.argmin(scores))])
    err = float(np.linalg.norm(s.values - goals.goals[i_star].values))
    if err < goals.goal_tol:
        goals.consumed[i_star] = True
    return actions[i_star]


# -- CSV -------------------------------------------------------------------------

def save_dictionary(dic: VisualFeedbackDictionary, path):
    """One atom per row, ds entries then dr entries, header naming columns."""
    ds_cols = []
    if dic.layout:
        for nm, _, ln in dic.layout:
            ds_cols.extend(f"ds:{nm}[{i}]" for i in range(ln))
    else:
        ds_cols = [f"ds[{i}]" for i in range(dic.atoms_s.shape[1])]
    dr_cols = [f"dr[{i}]" for i in range(dic.atoms_r.shape[1])]
    with open(path, "w") as fh:
        fh.write(f"alpha {float(dic.alpha)!r}\n")
        fh.write(",".join(ds_cols + dr_cols) + "\n")
        for s_row, r_row in zip(dic.atoms_s, dic.atoms_r):
            vals = [repr(float(v)) for v in s_row] + [repr(float(v)) for v in r_row]
            fh.write(",".join(vals) + "\n")


def load_dictionary(path) -> VisualFeedbackDictionary:
    with open(path) as fh:
        first = fh.readline().split()
        alpha = float(first[1])
        header = fh.readline().strip().split(",")
        ds_dim = sum(1 for c in header if c.startswith("ds"))
        layout = []
        for col in header[:ds_dim]:
            if not col.startswith("ds:"):
                layout = []
                break
            nm = col[3:col.rindex("[")]
            if layout and layout[-1][0] == nm:
                layout[-1] = (nm, layout[-1][1], layout[-1][2] + 1)
            else:
                off = layout[-1][1] + layout[-1][2] if layout else 0
                layout.append((nm, off, 1))
        rows = [[float(v) for v in line.strip().split(",")]
                for line in fh if line.strip()]
    arr = np.array(rows)
    return VisualFeedbackDictionary(arr[:, :ds_dim], arr[:, ds_dim:],
                                    alpha=alpha, layout=layout)
