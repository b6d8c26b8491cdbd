"""Fixed-budget online Gaussian-process regression controller.

Maps desired feature-space steps to end-effector steps with an RBF GP
whose stored set is capped at a fixed capacity M.  Growth uses the block
inverse of the bordered Gram matrix; once full, the most redundant point
(largest Gram row sum) is replaced in place and the inverse is repaired
with a rank-2 Sherman-Morrison-Woodbury update, so no step ever pays a
full re-inversion.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParam, SingularBlock
from .mesh import clamp_step

log = logging.getLogger("domservo.fogpr")

BLOCK_TOL = 1e-12
DET_TOL = 1e-12


@dataclass
class GpHyperParams:
    sigma_n: float = 0.001          # observation noise
    sigma_rbf: float = 0.6          # RBF length scale
    capacity: int = 300             # stored-pair budget M
    eta: float = 1.0                # feedback gain
    mean_mode: str = "zero"         # zero | linear
    sgd_rate: float = 0.05          # linear-mean SGD step

    def __post_init__(self):
        if self.sigma_n <= 0 or self.sigma_rbf <= 0:
            raise InvalidParam("sigma_n and sigma_rbf must be positive")
        if self.capacity < 1:
            raise InvalidParam("capacity must be >= 1")
        if self.mean_mode not in ("zero", "linear"):
            raise InvalidParam(f"unknown mean mode {self.mean_mode!r}")


@dataclass
class GpModel:
    hp: GpHyperParams
    dim_s: int
    dim_r: int
    stored_s: np.ndarray = None     # (N, ds)
    stored_r: np.ndarray = None     # (N, dr)
    gram: np.ndarray = None         # A = K + sigma_n^2 I, maintained
    gram_inv: np.ndarray = None     # A^-1, maintained incrementally
    W: np.ndarray = None            # linear mean weights (dr, ds)

    def __post_init__(self):
        if self.stored_s is None:
            self.stored_s = np.zeros((0, self.dim_s))
        if self.stored_r is None:
            self.stored_r = np.zeros((0, self.dim_r))
        if self.gram is None:
            self.gram = np.zeros((0, 0))
        if self.gram_inv is None:
            self.gram_inv = np.zeros((0, 0))
        if self.W is None:
            self.W = np.zeros((self.dim_r, self.dim_s))

    @property
    def size(self) -> int:
        return len(self.stored_s)


def rbf_vec(model: GpModel, x: np.ndarray) -> np.ndarray:
    d = model.stored_s - x[None, :]
    return np.exp(-np.sum(d * d, axis=1) / (2.0 * model.hp.sigma_rbf ** 2))


def _mean(model: GpModel, x: np.ndarray) -> np.ndarray:
    if model.hp.mean_mode == "linear":
        return model.W @ x
    return np.zeros(model.dim_r)


def _mean_rows(model: GpModel) -> np.ndarray:
    if model.hp.mean_mode == "linear":
        return model.stored_s @ model.W.T
    return np.zeros_like(model.stored_r)


def predict(model: GpModel, x: np.ndarray):
    """Posterior mean (dr,) and one shared variance across output dims.

    An empty model returns the prior (m(x), k(x, x)).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != model.dim_s:
        raise InvalidParam(f"query dim {x.shape[0]} != {model.dim_s}")
    if model.size == 0:
        return _mean(model, x), 1.0
    k = rbf_vec(model, x)
    w = model.gram_inv @ k
    mu = _mean(model, x) + w @ (model.stored_r - _mean_rows(model))
    var = 1.0 - float(k @ w)
    return mu, float(min(max(var, 0.0), 1.0))


def grow(model: GpModel, s: np.ndarray, r: np.ndarray):
    """Append a pair, extending A^-1 with the block-inverse formula.

    Raises SingularBlock (model unchanged) when the Schur complement
    c - b^T A^-1 b of the bordered system is at the noise floor.
    """
    s = np.asarray(s, dtype=np.float64).ravel()
    r = np.asarray(r, dtype=np.float64).ravel()
    if model.size >= model.hp.capacity:
        raise InvalidParam("model at capacity; use forget_and_replace")
    c = 1.0 + model.hp.sigma_n ** 2
    if model.size == 0:
        model.stored_s = s[None, :].copy()
        model.stored_r = r[None, :].copy()
        model.gram = np.array([[c]])
        model.gram_inv = np.array([[1.0 / c]])
        return
    b = rbf_vec(model, s)
    ab = model.gram_inv @ b
    schur = c - float(b @ ab)
    if schur <= BLOCK_TOL:
        raise SingularBlock(f"Schur complement {schur:.3g} <= {BLOCK_TOL}")
    n = model.size
    inv = np.empty((n + 1, n + 1))
    inv[:n, :n] = model.gram_inv + np.outer(ab, ab) / schur
    inv[:n, n] = -ab / schur
    inv[n, :n] = -ab / schur
    inv[n, n] = 1.0 / schur
    gram = np.empty((n + 1, n + 1))
    gram[:n, :n] = model.gram
    gram[:n, n] = b
    gram[n, :n] = b
    gram[n, n] = c
    model.gram_inv = inv
    model.gram = gram
    model.stored_s = np.vstack([model.stored_s, s])
    model.stored_r = np.vstack([model.stored_r, r])


def select_forget(model: GpModel) -> int:
    """Index of the most redundant stored pair: the largest row sum of A
    (ties resolve to the lowest index)."""
    if model.size == 0:
        raise InvalidParam("empty model has nothing to forget")
    return int(np.argmax(model.gram.sum(axis=1)))


def forget_and_replace(model: GpModel, s: np.ndarray, r: np.ndarray,
                       i_star: int = None) -> int:
    """Overwrite stored pair i_star with (s, r) and repair A^-1 via the
    rank-2 Sherman-Morrison-Woodbury identity; a singular 2x2 capacitance
    falls back to one dense re-inversion (logged)."""
    s = np.asarray(s, dtype=np.float64).ravel()
    r = np.asarray(r, dtype=np.float64).ravel()
    if i_star is None:
        i_star = select_forget(model)
    n = model.size
    k_old = model.gram[:, i_star].copy()
    k_old[i_star] -= model.hp.sigma_n ** 2
    stored = model.stored_s.copy()
    stored[i_star] = s
    d = stored - s[None, :]
    k_new = np.exp(-np.sum(d * d, axis=1) / (2.0 * model.hp.sigma_rbf ** 2))
    dk = k_new - k_old
    e = np.zeros(n)
    e[i_star] = 1.0
    u2 = dk - 0.5 * e * dk[i_star]
    U = np.stack([e, u2], axis=1)          # (n, 2)
    V = np.stack([u2, e], axis=1)          # (n, 2)
    model.stored_s[i_star] = s
    model.stored_r[i_star] = r
    model.gram[i_star, :] = k_new
    model.gram[:, i_star] = k_new
    model.gram[i_star, i_star] = 1.0 + model.hp.sigma_n ** 2
    AiU = model.gram_inv @ U
    cap = np.eye(2) + V.T @ AiU
    det = cap[0, 0] * cap[1, 1] - cap[0, 1] * cap[1, 0]
    if abs(det) <= DET_TOL:
        log.warning("singular rank-2 update (det %.3g); dense re-inversion", det)
        model.gram_inv = np.linalg.inv(model.gram)
        return i_star
    cap_inv = np.array([[cap[1, 1], -cap[0, 1]], [-cap[1, 0], cap[0, 0]]]) / det
    model.gram_inv = model.gram_inv - AiU @ cap_inv @ (V.T @ model.gram_inv)
    return i_star


def update(model: GpModel, s: np.ndarray, r: np.ndarray):
    """Absorb one observed pair: grow under capacity, replace when full.
    A Linear mean additionally takes one SGD step on 1/2 |r - W s|^2."""
    s = np.asarray(s, dtype=np.float64).ravel()
    r = np.asarray(r, dtype=np.float64).ravel()
    if model.size < model.hp.capacity:
        try:
            grow(model, s, r)
        except SingularBlock as exc:
            log.debug("grow rejected: %s", exc)
    else:
        forget_and_replace(model, s, r)
    if model.hp.mean_mode == "linear":
        model.W += model.hp.sgd_rate * np.outer(r - model.W @ s, s)


def control_action(model: GpModel, s_now: np.ndarray, s_goal: np.ndarray,
                   rng: np.random.Generator = None, explore: bool = False,
                   max_step: float = 0.02) -> np.ndarray:
    """One servo step: query the GP at eta (s* - s) and clamp the result.

    With explore, each output dimension is drawn from Normal(mu_d, var)
    using the shared posterior variance.
    """
    q = model.hp.eta * (np.asarray(s_goal, float).ravel()
                        - np.asarray(s_now, float).ravel())
    mu, var = predict(model, q)
    if explore:
        if rng is None:
            raise InvalidParam("explore requires an rng")
        action = rng.normal(loc=mu, scale=np.sqrt(var))
    else:
        action = mu
    return clamp_step(action, max_step)


# -- checkpoint ------------------------------------------------------------------

def save_gp(model: GpModel, path):
    hp = model.hp
    with open(path, "w") as fh:
        fh.write(f"hyper sigma_n={hp.sigma_n!r} sigma_rbf={hp.sigma_rbf!r} "
                 f"capacity={hp.capacity} eta={hp.eta!r} mean_mode={hp.mean_mode} "
                 f"sgd_rate={hp.sgd_rate!r}\n")
        for name, arr in (("storedS", model.stored_s), ("storedR", model.stored_r),
                          ("AInv", model.gram_inv), ("W", model.W)):
            fh.write(f"block {name} {arr.shape[0]} {arr.shape[1]}\n")
            for row in arr:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_gp(path) -> GpModel:
    with open(path) as fh:
        head = fh.readline().split()
        if head[0] != "hyper":
            raise InvalidParam("bad checkpoint header")
        kv = dict(p.split("=", 1) for p in head[1:])
        hp = GpHyperParams(sigma_n=float(kv["sigma_n"]), sigma_rbf=float(kv["sigma_rbf"]),
                           capacity=int(kv["capacity"]), eta=float(kv["eta"]),
                           mean_mode=kv["mean_mode"], sgd_rate=float(kv["sgd_rate"]))
        blocks = {}
        line = fh.readline()
        while line:
            parts = line.split()
            if parts[0] != "block":
                raise InvalidParam("expected block header")
            name, rows, cols = parts[1], int(parts[2]), int(parts[3])
            data = np.zeros((rows, cols))
            for i in range(rows):
                data[i] = [float(v) for v in fh.readline().strip().split(",")]
            blocks[name] = data
            line = fh.readline()
    stored_s = blocks["storedS"]
    stored_r = blocks["storedR"]
    W = blocks["W"]
    model = GpModel(hp, dim_s=W.shape[1], dim_r=W.shape[0])
    model.stored_s = stored_s
    model.stored_r = stored_r
    model.gram_inv = blocks["AInv"]
    model.W = W
    # A is re-derived from the stored points; predictions only touch AInv
    if len(stored_s):
        d = stored_s[:, None, :] - stored_s[None, :, :]
        K = np.exp(-np.sum(d * d, axis=2) / (2.0 * hp.sigma_rbf ** 2))
        model.gram = K + hp.sigma_n ** 2 * np.eye(len(stored_s))
    else:
        model.gram = np.zeros((0, 0))
    return model
