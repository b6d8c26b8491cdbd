"""Random-forest controller with continuous leaf actions.

Demonstrated actions are discretized into modes by flat-kernel mean
shift; the forest classifies observations into those modes; leaf actions
are then fit jointly so the forest average reproduces the demonstrated
actions, optionally with per-leaf confidences refined under an L1
sparsity pull.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .errors import DegenerateData, InvalidParam, OptFailure, SingularSystem

log = logging.getLogger("domservo.forest")

GAMMA_MIN = 0.01
GAMMA_MAX = 1.0
RIDGE = 1e-9


# -- mean shift ------------------------------------------------------------------

def default_bandwidth(actions: np.ndarray) -> float:
    """0.2 x root-mean-square pairwise distance of the action set."""
    actions = np.asarray(actions, dtype=np.float64)
    n = len(actions)
    if n < 2:
        return 1.0
    d2 = np.sum((actions[:, None, :] - actions[None, :, :]) ** 2, axis=2)
    ms = d2[np.triu_indices(n, 1)].mean()
    return 0.2 * math.sqrt(ms) if ms > 0 else 1.0


def meanshift_labels(actions: np.ndarray, bandwidth: float) -> np.ndarray:
    """Flat-kernel mean-shift clustering of action vectors.

    Each point ascends to its mode (mean of data points within bandwidth,
    all points updated in lockstep); modes closer than bandwidth/2 merge.
    Labels are dense, ordered by first appearance, deterministic given
    the input order.
    """
    actions = np.asarray(actions, dtype=np.float64)
    if actions.ndim == 1:
        actions = actions[:, None]
    n = len(actions)
    if n == 0:
        raise InvalidParam("no actions to cluster")
    if bandwidth <= 0:
        raise InvalidParam("bandwidth must be positive")
    modes = actions.copy()
    a_sq = np.sum(actions * actions, axis=1)
    for _ in range(500):
        d2 = (np.sum(modes * modes, axis=1)[:, None] + a_sq[None, :]
              - 2.0 * modes @ actions.T)
        within = d2 <= bandwidth ** 2
        nm = (within @ actions) / within.sum(axis=1)[:, None]
        shift = np.abs(nm - modes).max()
        modes = nm
        if shift < 1e-9 * bandwidth:
            break
    centers = []
    labels = np.zeros(n, dtype=np.int64)
    for i in range(n):
        for j, c in enumerate(centers):
            if np.linalg.norm(modes[i] - c) < bandwidth / 2:
                labels[i] = j
                break
        else:
            centers.append(modes[i])
            labels[i] = len(centers) - 1
    return labels


# -- trees -------------------------------------------------------------------------

class TreeNode:
    __slots__ = ("feature", "threshold", "left", "right", "leaf_id",
                 "training_count", "candidates")

    def __init__(self):
        self.feature = -1
        self.threshold = 0.0
        self.left = None
        self.right = None
        self.leaf_id = 0          # 1-based within the tree; 0 for internal
        self.training_count = 0
        self.candidates = None    # (feats, thresholds, gains) when recorded

    @property
    def is_leaf(self):
        return self.left is None


@dataclass
class DecisionTree:
    root: TreeNode
    n_leaves: int = 0

    def leaf_of(self, x: np.ndarray) -> int:
        node = self.root
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node.leaf_id


@dataclass
class ForestParams:
    n_trees: int = 8
    max_depth: int = 12
    stopping_gain: float = 1e-4
    bag_fraction: float = 0.63
    n_thresholds: int = 10
    theta: float = 1e-5            # confidence L1 weight


@dataclass
class RandomForestController:
    trees: list
    params: ForestParams
    n_classes: int
    tree_offsets: np.ndarray = None      # global leaf index base per tree
    leaf_actions: np.ndarray = None      # (L_total, dr)
    leaf_conf: np.ndarray = None         # (L_total,)
    has_confidence: bool = False
    bandwidth: float = 0.0

    def __post_init__(self):
        if self.tree_offsets is None:
            offs = np.zeros(len(self.trees), dtype=np.int64)
            acc = 0
            for i, t in enumerate(self.trees):
                offs[i] = acc
                acc += t.n_leaves
            self.tree_offsets = offs

    @property
    def total_leaves(self) -> int:
        return int(self.tree_offsets[-1] + self.trees[-1].n_leaves)

    def leaf_counts(self):
        return [t.n_leaves for t in self.trees]

    def route(self, x: np.ndarray) -> np.ndarray:
        """Global leaf indices of x, one per tree."""
        return np.array([self.tree_offsets[i] + t.leaf_of(x) - 1
                         for i, t in enumerate(self.trees)], dtype=np.int64)

    def route_all(self, X: np.ndarray) -> np.ndarray:
        return np.vstack([self.route(x) for x in X])


def leaf_path(ctrl: RandomForestController, x: np.ndarray):
    """Per-tree 1-based leaf ids visited by x."""
    return [t.leaf_of(x) for t in ctrl.trees]


def _build_tree(X, y, idx, params, n_classes, tree_seed, record):
    root = TreeNode()
    depth_budget = params.max_depth

    def grow(node, idx, depth, path):
        node.training_count = len(idx)
        labels = y[idx]
        if depth >= depth_budget or len(idx) < 2 or np.all(labels == labels[0]):
            return
        # Candidate draws are keyed by (tree, node position), not by build
        # order, so retraining on a grown dataset reuses each node's
        # candidates instead of re-randomizing whole subtrees.
        gen = np.random.default_rng([tree_seed, path])
        d = X.shape[1]
        m = max(1, int(round(math.sqrt(d))))
        feats = gen.choice(d, size=min(m, d), replace=False)
        sub = X[np.ix_(idx, feats)]
        lo = sub.min(axis=0)
        hi = sub.max(axis=0)
        thr = lo[:, None] + (hi - lo)[:, None] * gen.random((len(feats),
                                                             params.n_thresholds))
        gains = kernels.split_gain_scan(sub, labels, n_classes, thr)
        flat = int(np.argmax(gains))
        fi, ti = flat // params.n_thresholds, flat % params.n_thresholds
        if record:
            node.candidates = (feats.copy(), thr.copy(), gains.copy())
        if gains[fi, ti] < params.stopping_gain:
            return
        node.feature = int(feats[fi])
        node.threshold = float(thr[fi, ti])
        mask = X[idx, node.feature] <= node.threshold
        node.left = TreeNode()
        node.right = TreeNode()
        grow(node.left, idx[mask], depth + 1, 2 * path)
        grow(node.right, idx[~mask], depth + 1, 2 * path + 1)

    grow(root, idx, 0, 1)
    return root


def _assign_leaf_ids(root: TreeNode) -> int:
    next_id = [0]

    def walk(node):
        if node.is_leaf:
            next_id[0] += 1
            node.leaf_id = next_id[0]
        else:
            walk(node.left)
            walk(node.right)

    walk(root)
    return next_id[0]


def build_forest(X: np.ndarray, labels: np.ndarray, rng: np.random.Generator,
                 params: ForestParams = None, record_splits: bool = False
                 ) -> RandomForestController:
    """K trees on uniform 63% bags; each node scans sqrt(d) random features
    x 10 uniform thresholds and keeps the best Shannon information gain,
    stopping at max depth or below the gain floor."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(X) != len(labels) or len(X) == 0:
        raise InvalidParam("bad training data")
    params = params or ForestParams()
    n_classes = int(labels.max()) + 1
    if np.all(X == X[0]):
        log.warning("all features constant; forest degenerates to single leaves")
    n = len(X)
    # Per-tree child streams; each sample joins a tree's bag independently
    # with probability bag_fraction.  Keyed this way, rebuilding on a grown
    # dataset extends each bag instead of reshuffling it, so topology
    # changes track data growth rather than bagging churn.
    seeds = rng.integers(2 ** 63, size=params.n_trees)
    trees = []
    for k in range(params.n_trees):
        u = np.random.default_rng(seeds[k]).random(n)
        idx = np.flatnonzero(u < params.bag_fraction)
        if len(idx) == 0:
            idx = np.array([int(np.argmin(u))])
        root = _build_tree(X, labels, idx, params, n_classes, int(seeds[k]),
                           record_splits)
        tree = DecisionTree(root)
        tree.n_leaves = _assign_leaf_ids(root)
        trees.append(tree)
    return RandomForestController(trees=trees, params=params, n_classes=n_classes)


# -- leaf action fitting -----------------------------------------------------------

def fit_leaves_quadratic(ctrl: RandomForestController, X: np.ndarray,
                         R: np.ndarray, routes: np.ndarray = None) -> None:
    """Least-squares leaf actions: minimize sum_n |r_n - mean_k a_{leaf}|^2
    by the normal equations (ridge jitter on singularity; unreached leaves
    take the global mean action)."""
    X = np.asarray(X, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    if R.ndim == 1:
        R = R[:, None]
    n, dr = R.shape
    K = len(ctrl.trees)
    L = ctrl.total_leaves
    I = ctrl.route_all(X) if routes is None else routes
    G = np.zeros((L, L))
    B = np.zeros((L, dr))
    w = 1.0 / K
    for k1 in range(K):
        np.add.at(B, I[:, k1], w * R)
        for k2 in range(K):
            np.add.at(G, (I[:, k1], I[:, k2]), w * w)
    reached = np.diag(G) > 0
    A = np.zeros((L, dr))
    A[~reached] = R.mean(axis=0)
    Gr = G[np.ix_(reached, reached)]
    Br = B[reached]
    try:
        c = np.linalg.cholesky(Gr)
        A[reached] = np.linalg.solve(c.T, np.linalg.solve(c, Br))
    except np.linalg.LinAlgError:
        log.warning("singular leaf system; solving with ridge %g", RIDGE)
        try:
            A[reached] = np.linalg.solve(Gr + RIDGE * np.eye(len(Br)), Br)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(str(exc)) from None
    ctrl.leaf_actions = A
    ctrl.leaf_conf = np.ones(L)
    ctrl.has_confidence = False


def _sparse_objective(flat, I, R, L, dr, theta):
    A = flat[:L * dr].reshape(L, dr)
    g = flat[L * dr:]
    gn = g[I]                       # (n, K)
    S = gn.sum(axis=1)              # (n,)
    an = A[I]                       # (n, K, dr)
    pred = np.einsum("nk,nkd->nd", gn, an) / S[:, None]
    e = pred - R
    F = float(np.sum(e * e)) + theta * float(g.sum())
    gA = np.zeros((L, dr))
    scale = 2.0 * gn / S[:, None]                      # (n, K)
    np.add.at(gA, I.ravel(), (scale[:, :, None] * e[:, None, :]).reshape(-1, dr))
    gG = np.full(L, theta)
    contrib = 2.0 * np.einsum("nkd,nd->nk", an - pred[:, None, :], e) / S[:, None]
    np.add.at(gG, I.ravel(), contrib.ravel())
    return F, np.concatenate([gA.ravel(), gG])


def fit_leaves_sparse(ctrl: RandomForestController, X: np.ndarray, R: np.ndarray,
                      maxiter: int = 200, routes: np.ndarray = None,
                      raise_on_failure: bool = False) -> None:
    """Confidence-weighted refinement: actions plus gamma in [0.01, 1] under
    sum |r - (sum gamma a)/(sum gamma)|^2 + theta |gamma|_1, L-BFGS-B from
    the quadratic fit.  Never worse than its initialization."""
    X = np.asarray(X, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    if R.ndim == 1:
        R = R[:, None]
    if routes is None:
        routes = ctrl.route_all(X)
    if ctrl.leaf_actions is None:
        fit_leaves_quadratic(ctrl, X, R, routes=routes)
    L = ctrl.total_leaves
    dr = R.shape[1]
    theta = ctrl.params.theta
    I = routes
    x0 = np.concatenate([ctrl.leaf_actions.ravel(), np.ones(L)])
    f0, _ = _sparse_objective(x0, I, R, L, dr, theta)
    bounds = [(None, None)] * (L * dr) + [(GAMMA_MIN, GAMMA_MAX)] * L
    res = minimize(_sparse_objective, x0, args=(I, R, L, dr, theta),
                   method="L-BFGS-B", jac=True, bounds=bounds,
                   options={"maxiter": maxiter})
    f1, _ = _sparse_objective(res.x, I, R, L, dr, theta)
    if f1 > f0:
        log.warning("confidence refinement worsened %.6g -> %.6g; keeping init",
                    f0, f1)
        ctrl.leaf_conf = np.ones(L)
        ctrl.has_confidence = True
        if raise_on_failure:
            raise OptFailure(f"objective rose from {f0:.6g} to {f1:.6g}")
        return
    ctrl.leaf_actions = res.x[:L * dr].reshape(L, dr)
    ctrl.leaf_conf = np.clip(res.x[L * dr:], GAMMA_MIN, GAMMA_MAX)
    ctrl.has_confidence = True


def predict_action(ctrl: RandomForestController, x: np.ndarray) -> np.ndarray:
    """Confidence-weighted average of routed leaf actions (plain average
    until confidences are fitted)."""
    if ctrl.leaf_actions is None:
        raise InvalidParam("leaf actions not fitted")
    idx = ctrl.route(np.asarray(x, dtype=np.float64))
    acts = ctrl.leaf_actions[idx]
    if ctrl.has_confidence:
        g = ctrl.leaf_conf[idx]
        return (g[:, None] * acts).sum(axis=0) / g.sum()
    return acts.mean(axis=0)


def mean_action_error(ctrl: RandomForestController, X: np.ndarray,
                      R: np.ndarray) -> float:
    """err = sum_n |r_n - pred_n|^2 / (dim(r) * N)."""
    X = np.asarray(X, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    if R.ndim == 1:
        R = R[:, None]
    acc = 0.0
    for i in range(len(X)):
        d = R[i] - predict_action(ctrl, X[i])
        acc += float(d @ d)
    return acc / (R.shape[1] * len(X))


# -- serialization -----------------------------------------------------------------

def _write_node(node, offset, actions, conf, out):
    if node.is_leaf:
        gi = offset + node.leaf_id - 1
        a = " ".join(repr(float(v)) for v in actions[gi])
        out.append(f"leaf {node.leaf_id} {float(conf[gi])!r} {a}")
    else:
        out.append(f"split {node.feature} {float(node.threshold)!r}")
        _write_node(node.left, offset, actions, conf, out)
        _write_node(node.right, offset, actions, conf, out)


def save_forest(ctrl: RandomForestController, path):
    """Line-oriented text: preorder `split f t` / `leaf id gamma a1..ad`."""
    if ctrl.leaf_actions is None:
        raise InvalidParam("fit leaf actions before saving")
    lines = [f"forest {len(ctrl.trees)} classes {ctrl.n_classes} "
             f"conf {int(ctrl.has_confidence)} bandwidth {float(ctrl.bandwidth)!r}"]
    for i, t in enumerate(ctrl.trees):
        lines.append(f"tree {t.n_leaves}")
        _write_node(t.root, ctrl.tree_offsets[i], ctrl.leaf_actions,
                    ctrl.leaf_conf, lines)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_forest(path) -> RandomForestController:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    head = lines[0].split()
    n_trees = int(head[1])
    n_classes = int(head[3])
    has_conf = bool(int(head[5]))
    bandwidth = float(head[7])
    pos = [1]
    trees = []
    actions = []
    confs = []

    def read_node():
        parts = lines[pos[0]].split()
        pos[0] += 1
        node = TreeNode()
        if parts[0] == "split":
            node.feature = int(parts[1])
            node.threshold = float(parts[2])
            node.left = read_node()
            node.right = read_node()
        else:
            node.leaf_id = int(parts[1])
            confs.append(float(parts[2]))
            actions.append([float(v) for v in parts[3:]])
        return node

    for _ in range(n_trees):
        n_leaves = int(lines[pos[0]].split()[1])
        pos[0] += 1
        root = read_node()
        tree = DecisionTree(root, n_leaves=n_leaves)
        trees.append(tree)
    ctrl = RandomForestController(trees=trees, params=ForestParams(n_trees=n_trees),
                                  n_classes=n_classes, has_confidence=has_conf,
                                  bandwidth=bandwidth)
    ctrl.leaf_actions = np.array(actions)
    ctrl.leaf_conf = np.array(confs)
    return ctrl
