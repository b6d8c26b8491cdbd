"""Linear visual-servo baselines.

Two variants of the classical controller that the nonlinear learners are
measured against: a fixed constant matrix applied to the scaled feature
error, and an adaptive Jacobian estimate W maintained by one stochastic
gradient step on 1/2 |dr - W ds|^2 per control cycle.
"""

import numpy as np

from .errors import InvalidParam
from .mesh import clamp_step

__all__ = ["linear_baseline_step", "AdaptiveLinear"]


def linear_baseline_step(s, s_goal, eta: float, matrix: np.ndarray = None,
                         max_step: float = None) -> np.ndarray:
    """Fixed variant: action = matrix @ (eta (s - s*)).

    Without a configured matrix the identity is used, which requires the
    action layout to match the feature layout.
    """
    s = np.asarray(s, dtype=np.float64).ravel()
    g = np.asarray(s_goal, dtype=np.float64).ravel()
    if s.shape != g.shape:
        raise InvalidParam("feature layouts differ")
    err = eta * (s - g)
    if matrix is None:
        act = err
    else:
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape[1] != s.size:
            raise InvalidParam("matrix columns must match feature size")
        act = matrix @ err
    if max_step is not None:
        act = clamp_step(act, max_step)
    return act


class AdaptiveLinear:
    """Adaptive-Jacobian servo: action = W eta (s* - s), with W updated by
    one SGD step per observed (ds, dr) pair."""

    def __init__(self, d_r: int, d_s: int, eta: float = 1.0,
                 sgd_rate: float = 0.05, w_init: np.ndarray = None):
        if w_init is None:
            self.W = np.zeros((d_r, d_s))
        else:
            self.W = np.array(w_init, dtype=np.float64)
            if self.W.shape != (d_r, d_s):
                raise InvalidParam("w_init shape mismatch")
        self.eta = float(eta)
        self.sgd_rate = float(sgd_rate)

    def action(self, s, s_goal, max_step: float = None) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64).ravel()
        g = np.asarray(s_goal, dtype=np.float64).ravel()
        if s.shape != g.shape:
            raise InvalidParam("feature layouts differ")
        act = self.W @ (self.eta * (g - s))
        if max_step is not None:
            act = clamp_step(act, max_step)
        return act

    def update(self, ds, dr):
        """One SGD step on Q = 1/2 |dr - W ds|^2."""
        ds = np.asarray(ds, dtype=np.float64).ravel()
        dr = np.asarray(dr, dtype=np.float64).ravel()
        self.W += self.sgd_rate * np.outer(dr - self.W @ ds, ds)
